#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace runmax::expr {

// Thrown by parse() with the byte offset of the first bad token.
struct ParseError : std::runtime_error {
    ParseError(std::string msg, std::size_t offset)
        : std::runtime_error(std::move(msg)), offset(offset) {}
    std::size_t offset;
};

// Thrown by eval() on division by zero, domain errors, missing variables,
// and any non-finite intermediate.  Silent NaN/Inf never escapes.
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<const Node>;
}

/// Immutable scalar expression over variables x1..x9.
/// Operators: + - * / ^ (unary minus), functions: sin cos tanh exp sqrt abs.
/// Safe to share and evaluate from many threads.
class CoeffExpr {
  public:
    CoeffExpr() = default;

    double eval(const std::vector<double>& point) const;
    double eval(double x1) const { return eval(std::vector<double>{x1}); }

    /// Exact symbolic derivative with respect to x{var_index+1}.
    CoeffExpr differentiate(int var_index) const;

    /// Fully parenthesized form; parse(print()) evaluates identically.
    std::string print() const;

    /// Largest variable index appearing (1-based), 0 for constants.
    int max_var() const;

    bool is_constant_zero() const;

    static CoeffExpr constant(double v);

    explicit CoeffExpr(detail::NodePtr root) : root_(std::move(root)) {}
    const detail::NodePtr& root() const { return root_; }

  private:
    detail::NodePtr root_;
};

CoeffExpr parse(const std::string& source);

} // namespace runmax::expr
