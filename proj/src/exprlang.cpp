#include "runmax/exprlang.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace runmax::expr {
namespace detail {

enum class Op { Lit, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Tanh, Exp, Sqrt, Abs };

struct Node {
    Op op;
    double value = 0.0; // Lit
    int var = 0;        // Var, 0-based
    NodePtr lhs, rhs;   // rhs only for binary ops
};

namespace {

NodePtr lit(double v) {
    auto n = std::make_shared<Node>();
    n->op = Op::Lit;
    n->value = v;
    return n;
}

NodePtr var(int idx) {
    auto n = std::make_shared<Node>();
    n->op = Op::Var;
    n->var = idx;
    return n;
}

NodePtr mk(Op op, NodePtr a, NodePtr b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
}

bool is_zero(const NodePtr& n) { return n->op == Op::Lit && n->value == 0.0; }
bool is_one(const NodePtr& n) { return n->op == Op::Lit && n->value == 1.0; }

// Light constant folding so derivative trees stay readable; not a CAS pass.
NodePtr add(NodePtr a, NodePtr b) {
    if (is_zero(a)) return b;
    if (is_zero(b)) return a;
    return mk(Op::Add, std::move(a), std::move(b));
}
NodePtr sub(NodePtr a, NodePtr b) {
    if (is_zero(b)) return a;
    return mk(Op::Sub, std::move(a), std::move(b));
}
NodePtr mul(NodePtr a, NodePtr b) {
    if (is_zero(a) || is_zero(b)) return lit(0.0);
    if (is_one(a)) return b;
    if (is_one(b)) return a;
    return mk(Op::Mul, std::move(a), std::move(b));
}
NodePtr div(NodePtr a, NodePtr b) {
    if (is_zero(a)) return lit(0.0);
    if (is_one(b)) return a;
    return mk(Op::Div, std::move(a), std::move(b));
}
NodePtr neg(NodePtr a) {
    if (is_zero(a)) return a;
    return mk(Op::Neg, std::move(a));
}

double check_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw EvalError(std::string("non-finite value in ") + what);
    return v;
}

double eval_node(const Node& n, const std::vector<double>& p) {
    switch (n.op) {
        case Op::Lit: return n.value;
        case Op::Var:
            if (n.var >= static_cast<int>(p.size()))
                throw EvalError("missing variable x" + std::to_string(n.var + 1));
            return p[n.var];
        case Op::Add: return check_finite(eval_node(*n.lhs, p) + eval_node(*n.rhs, p), "+");
        case Op::Sub: return check_finite(eval_node(*n.lhs, p) - eval_node(*n.rhs, p), "-");
        case Op::Mul: return check_finite(eval_node(*n.lhs, p) * eval_node(*n.rhs, p), "*");
        case Op::Div: {
            double d = eval_node(*n.rhs, p);
            if (d == 0.0) throw EvalError("division by zero");
            return check_finite(eval_node(*n.lhs, p) / d, "/");
        }
        case Op::Pow: {
            double b = eval_node(*n.lhs, p);
            double e = eval_node(*n.rhs, p);
            double r = std::pow(b, e);
            if (!std::isfinite(r)) throw EvalError("pow domain/overflow error");
            return r;
        }
        case Op::Neg: return -eval_node(*n.lhs, p);
        case Op::Sin: return std::sin(eval_node(*n.lhs, p));
        case Op::Cos: return std::cos(eval_node(*n.lhs, p));
        case Op::Tanh: return std::tanh(eval_node(*n.lhs, p));
        case Op::Exp: {
            double r = std::exp(eval_node(*n.lhs, p));
            if (!std::isfinite(r)) throw EvalError("exp overflow");
            return r;
        }
        case Op::Sqrt: {
            double a = eval_node(*n.lhs, p);
            if (a < 0.0) throw EvalError("sqrt of negative value");
            return std::sqrt(a);
        }
        case Op::Abs: return std::fabs(eval_node(*n.lhs, p));
    }
    throw EvalError("corrupt expression tree");
}

NodePtr diff_node(const NodePtr& n, int v);

NodePtr diff_unary(const NodePtr& n, int v) {
    NodePtr u = n->lhs;
    NodePtr du = diff_node(u, v);
    switch (n->op) {
        case Op::Sin: return mul(mk(Op::Cos, u), du);
        case Op::Cos: return neg(mul(mk(Op::Sin, u), du));
        case Op::Tanh: {
            // d tanh = 1 - tanh^2
            NodePtr th = mk(Op::Tanh, u);
            return mul(sub(lit(1.0), mul(th, th)), du);
        }
        case Op::Exp: return mul(mk(Op::Exp, u), du);
        case Op::Sqrt:
            return div(du, mul(lit(2.0), mk(Op::Sqrt, u)));
        case Op::Abs:
            // d|u| = u/|u| * du (undefined at 0; eval there raises div-by-zero)
            return mul(div(u, mk(Op::Abs, u)), du);
        default: break;
    }
    throw EvalError("corrupt expression tree");
}

NodePtr diff_node(const NodePtr& n, int v) {
    switch (n->op) {
        case Op::Lit: return lit(0.0);
        case Op::Var: return lit(n->var == v ? 1.0 : 0.0);
        case Op::Add: return add(diff_node(n->lhs, v), diff_node(n->rhs, v));
        case Op::Sub: return sub(diff_node(n->lhs, v), diff_node(n->rhs, v));
        case Op::Mul:
            return add(mul(diff_node(n->lhs, v), n->rhs), mul(n->lhs, diff_node(n->rhs, v)));
        case Op::Div:
            return div(sub(mul(diff_node(n->lhs, v), n->rhs), mul(n->lhs, diff_node(n->rhs, v))),
                       mul(n->rhs, n->rhs));
        case Op::Pow: {
            // General case via u^e = exp(e*log u) is outside the function set;
            // constant integer-like exponents cover the DSL's use of '^'.
            if (n->rhs->op == Op::Lit) {
                double e = n->rhs->value;
                return mul(mul(lit(e), mk(Op::Pow, n->lhs, lit(e - 1.0))), diff_node(n->lhs, v));
            }
            // u^v with u>0: d = u^v * (dv*log u + v*du/u).  log is not in the
            // DSL, so reject symbolic differentiation of variable exponents.
            throw EvalError("cannot differentiate '^' with non-constant exponent");
        }
        case Op::Neg: return neg(diff_node(n->lhs, v));
        default: return diff_unary(n, v);
    }
}

void print_node(const Node& n, std::ostringstream& out) {
    auto bin = [&](const char* sym) {
        out << '(';
        print_node(*n.lhs, out);
        out << sym;
        print_node(*n.rhs, out);
        out << ')';
    };
    auto fn = [&](const char* name) {
        out << name << '(';
        print_node(*n.lhs, out);
        out << ')';
    };
    switch (n.op) {
        case Op::Lit: {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", n.value);
            if (n.value < 0) out << '(' << buf << ')';
            else out << buf;
            break;
        }
        case Op::Var: out << 'x' << (n.var + 1); break;
        case Op::Add: bin("+"); break;
        case Op::Sub: bin("-"); break;
        case Op::Mul: bin("*"); break;
        case Op::Div: bin("/"); break;
        case Op::Pow: bin("^"); break;
        case Op::Neg:
            out << "(-";
            print_node(*n.lhs, out);
            out << ')';
            break;
        case Op::Sin: fn("sin"); break;
        case Op::Cos: fn("cos"); break;
        case Op::Tanh: fn("tanh"); break;
        case Op::Exp: fn("exp"); break;
        case Op::Sqrt: fn("sqrt"); break;
        case Op::Abs: fn("abs"); break;
    }
}

int max_var_node(const Node& n) {
    int m = 0;
    if (n.op == Op::Var) m = n.var + 1;
    if (n.lhs) m = std::max(m, max_var_node(*n.lhs));
    if (n.rhs) m = std::max(m, max_var_node(*n.rhs));
    return m;
}

// ---- recursive descent parser -------------------------------------------
//
//   expr    := term (('+'|'-') term)*
//   term    := factor (('*'|'/') factor)*
//   factor  := '-' factor | power
//   power   := atom ('^' factor)?           (right associative, binds above unary -)
//   atom    := number | var | func '(' expr ')' | '(' expr ')'

class Parser {
  public:
    explicit Parser(const std::string& src) : src_(src) {}

    NodePtr run() {
        NodePtr e = expr();
        skip_ws();
        if (pos_ != src_.size())
            fail("expected end of input or operator");
        return e;
    }

  private:
    const std::string& src_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& expected) {
        throw ParseError("syntax error at offset " + std::to_string(pos_) + ": " + expected, pos_);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    NodePtr expr() {
        NodePtr e = term();
        for (;;) {
            if (eat('+')) e = mk(Op::Add, e, term());
            else if (eat('-')) e = mk(Op::Sub, e, term());
            else return e;
        }
    }

    NodePtr term() {
        NodePtr e = factor();
        for (;;) {
            if (eat('*')) e = mk(Op::Mul, e, factor());
            else if (eat('/')) e = mk(Op::Div, e, factor());
            else return e;
        }
    }

    NodePtr factor() {
        if (eat('-')) return mk(Op::Neg, factor());
        return power();
    }

    NodePtr power() {
        NodePtr base = atom();
        if (eat('^')) return mk(Op::Pow, base, factor());
        return base;
    }

    NodePtr atom() {
        skip_ws();
        if (pos_ >= src_.size()) fail("expected expression");
        char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c))) return ident();
        if (c == '(') {
            ++pos_;
            NodePtr e = expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        fail("expected expression");
    }

    NodePtr number() {
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
            ++pos_;
        // exponent part
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t mark = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
                    ++pos_;
            } else {
                pos_ = mark; // 'e' belonged to something else; not valid here
            }
        }
        try {
            std::size_t used = 0;
            double v = std::stod(src_.substr(start, pos_ - start), &used);
            if (used != pos_ - start) { pos_ = start; fail("malformed number"); }
            return lit(v);
        } catch (const std::exception&) {
            pos_ = start;
            fail("malformed number");
        }
    }

    NodePtr ident() {
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_]))))
            ++pos_;
        std::string name = src_.substr(start, pos_ - start);
        if (name.size() == 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '9')
            return var(name[1] - '1');
        Op fop;
        if (name == "sin") fop = Op::Sin;
        else if (name == "cos") fop = Op::Cos;
        else if (name == "tanh") fop = Op::Tanh;
        else if (name == "exp") fop = Op::Exp;
        else if (name == "sqrt") fop = Op::Sqrt;
        else if (name == "abs") fop = Op::Abs;
        else {
            pos_ = start;
            throw ParseError("unknown identifier '" + name + "' at offset " +
                                 std::to_string(start) + " (variables are x1..x9)",
                             start);
        }
        if (!eat('(')) fail("expected '(' after function name");
        NodePtr arg = expr();
        if (!eat(')')) fail("expected ')'");
        return mk(fop, arg);
    }
};

} // namespace
} // namespace detail

double CoeffExpr::eval(const std::vector<double>& point) const {
    if (!root_) throw EvalError("empty expression");
    double v = detail::eval_node(*root_, point);
    if (!std::isfinite(v)) throw EvalError("non-finite result");
    return v;
}

CoeffExpr CoeffExpr::differentiate(int var_index) const {
    if (!root_) throw EvalError("empty expression");
    if (var_index < 0 || var_index >= 9)
        throw std::invalid_argument("variable index out of range");
    return CoeffExpr(detail::diff_node(root_, var_index));
}

std::string CoeffExpr::print() const {
    if (!root_) return "0";
    std::ostringstream out;
    detail::print_node(*root_, out);
    return out.str();
}

int CoeffExpr::max_var() const { return root_ ? detail::max_var_node(*root_) : 0; }

bool CoeffExpr::is_constant_zero() const {
    return root_ && root_->op == detail::Op::Lit && root_->value == 0.0;
}

CoeffExpr CoeffExpr::constant(double v) { return CoeffExpr(detail::lit(v)); }

CoeffExpr parse(const std::string& source) {
    detail::Parser p(source);
    return CoeffExpr(p.run());
}

} // namespace runmax::expr
