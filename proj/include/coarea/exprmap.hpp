#pragma once

// Differentiable maps phi: R^k -> R^n written in a small arithmetic language.
//
// Grammar (whitespace is ignored):
//
//   map      = expr { ";" expr } ;
//   expr     = term { ("+" | "-") term } ;
//   term     = unary { ("*" | "/") unary } ;
//   unary    = ("-" | "+") unary | power ;
//   power    = primary [ "^" unary ] ;          (right associative)
//   primary  = number | variable | "pi"
//            | func "(" expr ")" | "(" expr ")" ;
//   func     = "sqrt" | "exp" | "log" | "abs" | "sin" | "cos" ;
//   variable = "x" digit { digit } ;            (x1 .. xk)
//   number   = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//
// Unary minus binds looser than "^", so -x1^2 is -(x1^2).

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace coarea {

using Point = std::vector<double>;

/// Forward-mode dual number carrying a value and its gradient with respect to
/// a fixed set of k input variables.
class DualVector {
public:
    DualVector() = default;
    /// A constant: all partials zero.
    DualVector(double value, std::size_t dim) : value_(value), partials_(dim, 0.0) {}
    DualVector(double value, std::vector<double> partials)
        : value_(value), partials_(std::move(partials)) {}

    /// The i-th coordinate function evaluated at `value`.
    static DualVector variable(double value, std::size_t dim, std::size_t index);

    double value() const noexcept { return value_; }
    std::span<const double> partials() const noexcept { return partials_; }
    double partial(std::size_t i) const { return partials_.at(i); }
    std::size_t dim() const noexcept { return partials_.size(); }
    bool is_constant() const noexcept;

    DualVector operator-() const;
    DualVector& operator+=(const DualVector& o);
    DualVector& operator-=(const DualVector& o);
    DualVector& operator*=(const DualVector& o);
    DualVector& operator/=(const DualVector& o);

    friend DualVector operator+(DualVector a, const DualVector& b) { return a += b; }
    friend DualVector operator-(DualVector a, const DualVector& b) { return a -= b; }
    friend DualVector operator*(DualVector a, const DualVector& b) { return a *= b; }
    friend DualVector operator/(DualVector a, const DualVector& b) { return a /= b; }

private:
    double value_ = 0.0;
    std::vector<double> partials_;
};

// Elementary functions on dual numbers. Domain violations throw DomainError;
// abs at 0 and sqrt at 0 throw NondifferentiablePoint.
DualVector sqrt(const DualVector& a);
DualVector exp(const DualVector& a);
DualVector log(const DualVector& a);
DualVector abs(const DualVector& a);
DualVector sin(const DualVector& a);
DualVector cos(const DualVector& a);
DualVector pow(const DualVector& base, double exponent);
DualVector pow(const DualVector& base, const DualVector& exponent);

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Sqrt, Exp, Log, Abs, Sin, Cos };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

/// Immutable expression tree node. Subtrees may be shared between maps.
struct ExprNode {
    Op op = Op::Const;
    double value = 0.0;   // Op::Const
    int var = 0;          // Op::Var, 1-based
    ExprPtr lhs;          // unary operand or left operand
    ExprPtr rhs;          // right operand of binary ops

    static ExprPtr constant(double v);
    static ExprPtr variable(int index);
    static ExprPtr unary(Op op, ExprPtr arg);
    static ExprPtr binary(Op op, ExprPtr a, ExprPtr b);
};

/// Structural equality of two trees (constants compared exactly).
bool same_tree(const ExprPtr& a, const ExprPtr& b);

/// Evaluate a single coordinate tree at x.
double eval_tree(const ExprPtr& node, std::span<const double> x);
DualVector eval_tree(const ExprPtr& node, std::span<const DualVector> x);

/// Textual form that parses back to the same tree.
std::string unparse(const ExprPtr& node);

/// A map R^k -> R^n given either by one expression tree per output
/// coordinate or by a user callback (for maps outside the grammar).
class MapExpr {
public:
    using ValueFn = std::function<void(std::span<const double> x, std::span<double> out)>;
    /// Fills an n-by-k Jacobian.
    using JacobianFn = std::function<void(std::span<const double> x, Eigen::MatrixXd& jac)>;

    MapExpr(std::size_t k, std::vector<ExprPtr> coords);

    /// Extension point for maps that cannot be written in the grammar. When
    /// `jacobian` is empty the Jacobian is approximated by central differences
    /// with step 1e-6 * max(1, |x_j|).
    static MapExpr from_callback(std::size_t k, std::size_t n, ValueFn value,
                                 JacobianFn jacobian = {});

    std::size_t input_dim() const noexcept { return k_; }
    std::size_t output_dim() const noexcept { return n_; }
    bool is_expression() const noexcept { return !callback_; }
    const std::vector<ExprPtr>& coords() const noexcept { return coords_; }

    Point eval(std::span<const double> x) const;
    void eval_into(std::span<const double> x, std::span<double> out) const;
    Eigen::MatrixXd jacobian(std::span<const double> x) const;
    std::vector<DualVector> eval_dual(std::span<const DualVector> x) const;

    /// Semicolon-separated source text (expression maps only).
    std::string to_string() const;

private:
    struct Callback {
        ValueFn value;
        JacobianFn jacobian;
    };

    MapExpr(std::size_t k, std::size_t n, std::shared_ptr<const Callback> cb);
    void check_input(std::span<const double> x) const;

    std::size_t k_ = 0;
    std::size_t n_ = 0;
    std::vector<ExprPtr> coords_;
    std::shared_ptr<const Callback> callback_;
};

/// Parse a semicolon-separated list of n expressions over x1..xk.
MapExpr parse_map(std::string_view source, std::size_t k, std::size_t n);

/// Coordinatewise substitution: (outer o inner)(x) = outer(inner(x)).
MapExpr compose(const MapExpr& outer, const MapExpr& inner);

/// Identity map on R^k.
MapExpr identity_map(std::size_t k);

// JSON form {"k":int,"n":int,"coords":[string,...]}.
nlohmann::json map_to_json(const MapExpr& m);
MapExpr map_from_json(const nlohmann::json& j);

// Free-function spellings used throughout the library.
inline Point eval_map(const MapExpr& m, std::span<const double> x) { return m.eval(x); }
inline Eigen::MatrixXd jacobian(const MapExpr& m, std::span<const double> x) {
    return m.jacobian(x);
}

}  // namespace coarea
