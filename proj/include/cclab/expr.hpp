// Small arithmetic expression language used for custom frame coefficients and
// for the f/g field specifiers of the command-line tool.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?
//   primary := number | 'pi' | x1..xn | func '(' expr (',' expr)* ')' | '(' expr ')'
//
// Functions: pow(a,b) exp sin cos sqrt abs log min(a,b) max(a,b).
// Expressions compile to a postfix program; evaluation is allocation-free
// apart from a small stack.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cclab/errors.hpp"

namespace cclab {

class Expression {
 public:
  Expression() = default;

  // Parses `text` with variables x1..x{num_vars}. Throws ParseError.
  static Expression parse(std::string_view text, int num_vars) {
    Parser parser{text, num_vars, {}};
    parser.parse_expr();
    parser.skip_ws();
    if (parser.pos != text.size()) {
      parser.fail("unexpected trailing input");
    }
    Expression e;
    e.code_ = std::move(parser.code);
    e.text_ = std::string(text);
    e.num_vars_ = num_vars;
    e.max_depth_ = stack_depth(e.code_);
    return e;
  }

  double operator()(std::span<const double> x) const {
    // Depth is bounded at parse time; expressions are short.
    double small[32] = {};
    std::vector<double> big;
    double* stack = small;
    if (max_depth_ > 32) {
      big.resize(max_depth_);
      stack = big.data();
    }
    std::size_t top = 0;
    for (const Instr& ins : code_) {
      switch (ins.op) {
        case Op::kConst: stack[top++] = ins.value; break;
        case Op::kVar: stack[top++] = x[ins.index]; break;
        case Op::kNeg: stack[top - 1] = -stack[top - 1]; break;
        case Op::kAdd: --top; stack[top - 1] += stack[top]; break;
        case Op::kSub: --top; stack[top - 1] -= stack[top]; break;
        case Op::kMul: --top; stack[top - 1] *= stack[top]; break;
        case Op::kDiv: --top; stack[top - 1] /= stack[top]; break;
        case Op::kPow: --top; stack[top - 1] = std::pow(stack[top - 1], stack[top]); break;
        case Op::kMin: --top; stack[top - 1] = std::min(stack[top - 1], stack[top]); break;
        case Op::kMax: --top; stack[top - 1] = std::max(stack[top - 1], stack[top]); break;
        case Op::kExp: stack[top - 1] = std::exp(stack[top - 1]); break;
        case Op::kSin: stack[top - 1] = std::sin(stack[top - 1]); break;
        case Op::kCos: stack[top - 1] = std::cos(stack[top - 1]); break;
        case Op::kSqrt: stack[top - 1] = std::sqrt(stack[top - 1]); break;
        case Op::kAbs: stack[top - 1] = std::abs(stack[top - 1]); break;
        case Op::kLog: stack[top - 1] = std::log(stack[top - 1]); break;
      }
    }
    return stack[0];
  }

  const std::string& text() const noexcept { return text_; }
  int num_vars() const noexcept { return num_vars_; }
  bool empty() const noexcept { return code_.empty(); }

  // True when the expression never reads a variable.
  bool is_constant() const noexcept {
    for (const Instr& ins : code_) {
      if (ins.op == Op::kVar) return false;
    }
    return true;
  }

 private:
  enum class Op {
    kConst, kVar, kNeg, kAdd, kSub, kMul, kDiv, kPow, kMin, kMax,
    kExp, kSin, kCos, kSqrt, kAbs, kLog
  };
  struct Instr {
    Op op;
    double value = 0.0;
    int index = 0;
  };

  static std::size_t stack_depth(const std::vector<Instr>& code) {
    std::size_t depth = 0, best = 0;
    for (const Instr& ins : code) {
      switch (ins.op) {
        case Op::kConst:
        case Op::kVar: ++depth; break;
        case Op::kAdd: case Op::kSub: case Op::kMul: case Op::kDiv:
        case Op::kPow: case Op::kMin: case Op::kMax: --depth; break;
        default: break;
      }
      best = std::max(best, depth);
    }
    return best;
  }

  struct Parser {
    std::string_view src;
    int num_vars;
    std::vector<Instr> code;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
      throw ParseError("expression '" + std::string(src) + "': " + msg +
                       " at column " + std::to_string(pos + 1));
    }

    void skip_ws() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }

    bool accept(char c) {
      skip_ws();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    void expect(char c) {
      if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    void parse_expr() {
      parse_term();
      for (;;) {
        if (accept('+')) {
          parse_term();
          code.push_back({Op::kAdd});
        } else if (accept('-')) {
          parse_term();
          code.push_back({Op::kSub});
        } else {
          return;
        }
      }
    }

    void parse_term() {
      parse_unary();
      for (;;) {
        if (accept('*')) {
          parse_unary();
          code.push_back({Op::kMul});
        } else if (accept('/')) {
          parse_unary();
          code.push_back({Op::kDiv});
        } else {
          return;
        }
      }
    }

    void parse_unary() {
      if (accept('-')) {
        parse_unary();
        code.push_back({Op::kNeg});
      } else if (accept('+')) {
        parse_unary();
      } else {
        parse_power();
      }
    }

    void parse_power() {
      parse_primary();
      if (accept('^')) {
        parse_unary();
        code.push_back({Op::kPow});
      }
    }

    void parse_primary() {
      skip_ws();
      if (pos >= src.size()) fail("unexpected end of input");
      const char c = src[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        parse_number();
        return;
      }
      if (accept('(')) {
        parse_expr();
        expect(')');
        return;
      }
      if (std::isalpha(static_cast<unsigned char>(c))) {
        const std::size_t start = pos;
        while (pos < src.size() && std::isalnum(static_cast<unsigned char>(src[pos]))) ++pos;
        parse_identifier(src.substr(start, pos - start), start);
        return;
      }
      fail(std::string("unexpected character '") + c + "'");
    }

    void parse_number() {
      const std::size_t start = pos;
      while (pos < src.size() &&
             (std::isdigit(static_cast<unsigned char>(src[pos])) || src[pos] == '.')) {
        ++pos;
      }
      if (pos < src.size() && (src[pos] == 'e' || src[pos] == 'E')) {
        std::size_t look = pos + 1;
        if (look < src.size() && (src[look] == '+' || src[look] == '-')) ++look;
        if (look < src.size() && std::isdigit(static_cast<unsigned char>(src[look]))) {
          pos = look;
          while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
        }
      }
      const std::string token(src.substr(start, pos - start));
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(token, &used);
      } catch (const std::exception&) {
        fail("malformed number '" + token + "'");
      }
      if (used != token.size()) fail("malformed number '" + token + "'");
      code.push_back({Op::kConst, value});
    }

    void parse_identifier(std::string_view name, std::size_t start) {
      if (name == "pi") {
        code.push_back({Op::kConst, std::numbers::pi});
        return;
      }
      if (name.size() >= 2 && name[0] == 'x' &&
          name.find_first_not_of("0123456789", 1) == std::string_view::npos) {
        const int k = std::stoi(std::string(name.substr(1)));
        if (k < 1 || k > num_vars) {
          pos = start;
          fail("variable '" + std::string(name) + "' out of range x1..x" +
               std::to_string(num_vars));
        }
        code.push_back({Op::kVar, 0.0, k - 1});
        return;
      }
      struct Fn {
        std::string_view name;
        Op op;
        int arity;
      };
      static constexpr Fn kFunctions[] = {
          {"pow", Op::kPow, 2}, {"min", Op::kMin, 2}, {"max", Op::kMax, 2},
          {"exp", Op::kExp, 1}, {"sin", Op::kSin, 1}, {"cos", Op::kCos, 1},
          {"sqrt", Op::kSqrt, 1}, {"abs", Op::kAbs, 1}, {"log", Op::kLog, 1},
      };
      for (const Fn& fn : kFunctions) {
        if (fn.name != name) continue;
        expect('(');
        parse_expr();
        for (int a = 1; a < fn.arity; ++a) {
          expect(',');
          parse_expr();
        }
        expect(')');
        code.push_back({fn.op});
        return;
      }
      pos = start;
      fail("unknown identifier '" + std::string(name) + "'");
    }
  };

  std::vector<Instr> code_;
  std::string text_;
  int num_vars_ = 0;
  std::size_t max_depth_ = 0;
};

}  // namespace cclab
