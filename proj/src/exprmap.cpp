#include "coarea/exprmap.hpp"

#include "coarea/errors.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace coarea {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double checked(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite result in ") + what);
    return v;
}

bool is_integer(double e) { return std::floor(e) == e; }

double pow_value(double base, double e) {
    if (base == 0.0 && e < 0.0) throw DomainError("zero raised to a negative power");
    if (base < 0.0 && !is_integer(e)) throw DomainError("negative base with non-integer exponent");
    return checked(std::pow(base, e), "^");
}

}  // namespace

// ---------------------------------------------------------------- DualVector

DualVector DualVector::variable(double value, std::size_t dim, std::size_t index) {
    DualVector d(value, dim);
    d.partials_.at(index) = 1.0;
    return d;
}

bool DualVector::is_constant() const noexcept {
    for (double p : partials_)
        if (p != 0.0) return false;
    return true;
}

DualVector DualVector::operator-() const {
    DualVector r(*this);
    r.value_ = -r.value_;
    for (double& p : r.partials_) p = -p;
    return r;
}

DualVector& DualVector::operator+=(const DualVector& o) {
    value_ += o.value_;
    for (std::size_t i = 0; i < partials_.size(); ++i) partials_[i] += o.partials_[i];
    return *this;
}

DualVector& DualVector::operator-=(const DualVector& o) {
    value_ -= o.value_;
    for (std::size_t i = 0; i < partials_.size(); ++i) partials_[i] -= o.partials_[i];
    return *this;
}

DualVector& DualVector::operator*=(const DualVector& o) {
    for (std::size_t i = 0; i < partials_.size(); ++i)
        partials_[i] = partials_[i] * o.value_ + value_ * o.partials_[i];
    value_ *= o.value_;
    return *this;
}

DualVector& DualVector::operator/=(const DualVector& o) {
    if (o.value_ == 0.0) throw DomainError("division by zero");
    const double inv = 1.0 / o.value_;
    const double q = value_ * inv;
    for (std::size_t i = 0; i < partials_.size(); ++i)
        partials_[i] = (partials_[i] - q * o.partials_[i]) * inv;
    value_ = q;
    return *this;
}

namespace {

// f(a) with derivative f'(a) applied through the chain rule.
DualVector chain(const DualVector& a, double value, double slope) {
    std::vector<double> p(a.partials().begin(), a.partials().end());
    for (double& v : p) v *= slope;
    return {value, std::move(p)};
}

}  // namespace

DualVector sqrt(const DualVector& a) {
    if (a.value() < 0.0) throw DomainError("sqrt of a negative number");
    if (a.value() == 0.0) {
        if (a.is_constant()) return {0.0, a.dim()};
        throw NondifferentiablePoint("sqrt is not differentiable at 0");
    }
    const double s = std::sqrt(a.value());
    return chain(a, s, 0.5 / s);
}

DualVector exp(const DualVector& a) {
    const double e = checked(std::exp(a.value()), "exp");
    return chain(a, e, e);
}

DualVector log(const DualVector& a) {
    if (a.value() <= 0.0) throw DomainError("log of a nonpositive number");
    return chain(a, std::log(a.value()), 1.0 / a.value());
}

DualVector abs(const DualVector& a) {
    if (a.value() == 0.0) {
        if (a.is_constant()) return {0.0, a.dim()};
        throw NondifferentiablePoint("abs is not differentiable at 0");
    }
    return chain(a, std::fabs(a.value()), a.value() > 0.0 ? 1.0 : -1.0);
}

DualVector sin(const DualVector& a) { return chain(a, std::sin(a.value()), std::cos(a.value())); }

DualVector cos(const DualVector& a) { return chain(a, std::cos(a.value()), -std::sin(a.value())); }

DualVector pow(const DualVector& base, double e) {
    const double v = pow_value(base.value(), e);
    if (e == 0.0 || base.is_constant()) return {v, base.dim()};
    double slope;
    if (base.value() == 0.0) {
        if (e == 1.0) slope = 1.0;
        else if (e > 1.0) slope = 0.0;
        else throw NondifferentiablePoint("power with exponent < 1 is not differentiable at 0");
    } else {
        slope = checked(e * std::pow(base.value(), e - 1.0), "^");
    }
    return chain(base, v, slope);
}

DualVector pow(const DualVector& base, const DualVector& exponent) {
    if (exponent.is_constant()) return pow(base, exponent.value());
    if (base.value() <= 0.0)
        throw DomainError("variable exponent requires a positive base");
    const double v = pow_value(base.value(), exponent.value());
    const double lb = std::log(base.value());
    std::vector<double> p(base.dim());
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = v * (exponent.partials()[i] * lb +
                    exponent.value() * base.partials()[i] / base.value());
    return {v, std::move(p)};
}

// ------------------------------------------------------------------ ExprNode

ExprPtr ExprNode::constant(double v) {
    auto n = std::make_shared<ExprNode>();
    n->op = Op::Const;
    n->value = v;
    return n;
}

ExprPtr ExprNode::variable(int index) {
    auto n = std::make_shared<ExprNode>();
    n->op = Op::Var;
    n->var = index;
    return n;
}

ExprPtr ExprNode::unary(Op op, ExprPtr arg) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->lhs = std::move(arg);
    return n;
}

ExprPtr ExprNode::binary(Op op, ExprPtr a, ExprPtr b) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
}

bool same_tree(const ExprPtr& a, const ExprPtr& b) {
    if (!a || !b) return !a && !b;
    if (a->op != b->op) return false;
    switch (a->op) {
        case Op::Const: return a->value == b->value;
        case Op::Var: return a->var == b->var;
        default: return same_tree(a->lhs, b->lhs) && same_tree(a->rhs, b->rhs);
    }
}

// ---------------------------------------------------------------- evaluation

namespace {

bool depends_on_input(const ExprPtr& node) {
    if (!node) return false;
    if (node->op == Op::Var) return true;
    return depends_on_input(node->lhs) || depends_on_input(node->rhs);
}

}  // namespace

double eval_tree(const ExprPtr& node, std::span<const double> x) {
    switch (node->op) {
        case Op::Const: return node->value;
        case Op::Var:
            if (node->var < 1 || static_cast<std::size_t>(node->var) > x.size())
                throw UnknownVariable("x" + std::to_string(node->var) + " is out of range");
            return x[node->var - 1];
        case Op::Neg: return -eval_tree(node->lhs, x);
        case Op::Add: return checked(eval_tree(node->lhs, x) + eval_tree(node->rhs, x), "+");
        case Op::Sub: return checked(eval_tree(node->lhs, x) - eval_tree(node->rhs, x), "-");
        case Op::Mul: return checked(eval_tree(node->lhs, x) * eval_tree(node->rhs, x), "*");
        case Op::Div: {
            const double num = eval_tree(node->lhs, x);
            const double den = eval_tree(node->rhs, x);
            if (den == 0.0) throw DomainError("division by zero");
            return checked(num / den, "/");
        }
        case Op::Pow: return pow_value(eval_tree(node->lhs, x), eval_tree(node->rhs, x));
        case Op::Sqrt: {
            const double a = eval_tree(node->lhs, x);
            if (a < 0.0) throw DomainError("sqrt of a negative number");
            return std::sqrt(a);
        }
        case Op::Exp: return checked(std::exp(eval_tree(node->lhs, x)), "exp");
        case Op::Log: {
            const double a = eval_tree(node->lhs, x);
            if (a <= 0.0) throw DomainError("log of a nonpositive number");
            return std::log(a);
        }
        case Op::Abs: return std::fabs(eval_tree(node->lhs, x));
        case Op::Sin: return std::sin(eval_tree(node->lhs, x));
        case Op::Cos: return std::cos(eval_tree(node->lhs, x));
    }
    throw Error("corrupt expression tree");
}

DualVector eval_tree(const ExprPtr& node, std::span<const DualVector> x) {
    const std::size_t dim = x.empty() ? 0 : x[0].dim();
    switch (node->op) {
        case Op::Const: return {node->value, dim};
        case Op::Var:
            if (node->var < 1 || static_cast<std::size_t>(node->var) > x.size())
                throw UnknownVariable("x" + std::to_string(node->var) + " is out of range");
            return x[node->var - 1];
        case Op::Neg: return -eval_tree(node->lhs, x);
        case Op::Add: return eval_tree(node->lhs, x) + eval_tree(node->rhs, x);
        case Op::Sub: return eval_tree(node->lhs, x) - eval_tree(node->rhs, x);
        case Op::Mul: return eval_tree(node->lhs, x) * eval_tree(node->rhs, x);
        case Op::Div: return eval_tree(node->lhs, x) / eval_tree(node->rhs, x);
        case Op::Pow: return pow(eval_tree(node->lhs, x), eval_tree(node->rhs, x));
        case Op::Sqrt:
        case Op::Abs: {
            DualVector a = eval_tree(node->lhs, x);
            // A vanishing gradient at a kink does not make the kink smooth:
            // sqrt(x1^2+x2^2) at the origin must still be rejected.
            if (a.value() == 0.0 && depends_on_input(node->lhs))
                throw NondifferentiablePoint(node->op == Op::Abs ? "abs is not differentiable at 0"
                                                                 : "sqrt is not differentiable at 0");
            return node->op == Op::Abs ? abs(a) : sqrt(a);
        }
        case Op::Exp: return exp(eval_tree(node->lhs, x));
        case Op::Log: return log(eval_tree(node->lhs, x));
        case Op::Sin: return sin(eval_tree(node->lhs, x));
        case Op::Cos: return cos(eval_tree(node->lhs, x));
    }
    throw Error("corrupt expression tree");
}

// ------------------------------------------------------------------- unparse

namespace {

int precedence(Op op) {
    switch (op) {
        case Op::Add:
        case Op::Sub: return 1;
        case Op::Mul:
        case Op::Div: return 2;
        case Op::Neg: return 3;
        case Op::Pow: return 4;
        default: return 5;
    }
}

const char* function_name(Op op) {
    switch (op) {
        case Op::Sqrt: return "sqrt";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Abs: return "abs";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        default: return nullptr;
    }
}

std::string wrap(const ExprPtr& child, bool parens) {
    return parens ? "(" + unparse(child) + ")" : unparse(child);
}

}  // namespace

std::string unparse(const ExprPtr& node) {
    switch (node->op) {
        case Op::Const: {
            const std::string s = fmt_double(node->value);
            return node->value < 0.0 || std::signbit(node->value) ? "(" + s + ")" : s;
        }
        case Op::Var: return "x" + std::to_string(node->var);
        case Op::Neg: return "-" + wrap(node->lhs, precedence(node->lhs->op) < 3);
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: {
            const int p = precedence(node->op);
            const char sym = node->op == Op::Add   ? '+'
                             : node->op == Op::Sub ? '-'
                             : node->op == Op::Mul ? '*'
                                                   : '/';
            // A Neg operand on the left of a binary operator must be wrapped:
            // "-a*b" would re-parse as -(a*b).
            const bool left_parens =
                precedence(node->lhs->op) < p || (node->lhs->op == Op::Neg && p >= 2);
            return wrap(node->lhs, left_parens) + sym +
                   wrap(node->rhs, precedence(node->rhs->op) <= p);
        }
        case Op::Pow:
            return wrap(node->lhs, precedence(node->lhs->op) <= 4) + "^" +
                   wrap(node->rhs, precedence(node->rhs->op) < 3);
        default: return std::string(function_name(node->op)) + "(" + unparse(node->lhs) + ")";
    }
}

// -------------------------------------------------------------------- parser

namespace {

class Parser {
public:
    Parser(std::string_view src, std::size_t k) : src_(src), k_(k) {}

    std::vector<ExprPtr> parse_all() {
        std::vector<ExprPtr> coords;
        coords.push_back(expr());
        skip_ws();
        while (pos_ < src_.size() && src_[pos_] == ';') {
            ++pos_;
            coords.push_back(expr());
            skip_ws();
        }
        if (pos_ < src_.size()) fail("unexpected trailing input");
        return coords;
    }

private:
    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        const std::string tok =
            pos_ < src_.size() ? std::string(src_.substr(pos_, 1)) : std::string("<end>");
        throw SyntaxError(pos_, tok, what);
    }

    ExprPtr expr() {
        ExprPtr lhs = term();
        for (;;) {
            if (accept('+')) lhs = ExprNode::binary(Op::Add, lhs, term());
            else if (accept('-')) lhs = ExprNode::binary(Op::Sub, lhs, term());
            else return lhs;
        }
    }

    ExprPtr term() {
        ExprPtr lhs = unary();
        for (;;) {
            if (accept('*')) lhs = ExprNode::binary(Op::Mul, lhs, unary());
            else if (accept('/')) lhs = ExprNode::binary(Op::Div, lhs, unary());
            else return lhs;
        }
    }

    ExprPtr unary() {
        if (accept('-')) return ExprNode::unary(Op::Neg, unary());
        if (accept('+')) return unary();
        return power();
    }

    ExprPtr power() {
        ExprPtr base = primary();
        if (accept('^')) return ExprNode::binary(Op::Pow, base, unary());
        return base;
    }

    ExprPtr primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail("expected an operand");
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (c == '(') {
            ++pos_;
            ExprPtr e = expr();
            if (!accept(')')) fail("expected ')'");
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
        fail("expected an operand");
    }

    ExprPtr number() {
        const std::size_t start = pos_;
        auto digits = [&] {
            std::size_t n = 0;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                ++pos_;
                ++n;
            }
            return n;
        };
        std::size_t nd = digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            nd += digits();
        }
        if (nd == 0) {
            pos_ = start;
            fail("malformed number");
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (digits() == 0) fail("malformed exponent");
        }
        const std::string text(src_.substr(start, pos_ - start));
        return ExprNode::constant(std::strtod(text.c_str(), nullptr));
    }

    ExprPtr identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                      src_[pos_] == '_'))
            ++pos_;
        const std::string_view name = src_.substr(start, pos_ - start);
        if (name.size() >= 2 && name[0] == 'x' &&
            name.substr(1).find_first_not_of("0123456789") == std::string_view::npos) {
            const std::string idx(name.substr(1));
            const unsigned long v = std::strtoul(idx.c_str(), nullptr, 10);
            if (v < 1 || v > k_)
                throw UnknownVariable("variable " + std::string(name) + " at position " +
                                      std::to_string(start) + " exceeds input dimension " +
                                      std::to_string(k_));
            return ExprNode::variable(static_cast<int>(v));
        }
        if (name == "pi") return ExprNode::constant(std::numbers::pi);
        static constexpr std::pair<std::string_view, Op> funcs[] = {
            {"sqrt", Op::Sqrt}, {"exp", Op::Exp}, {"log", Op::Log},
            {"abs", Op::Abs},   {"sin", Op::Sin}, {"cos", Op::Cos}};
        for (const auto& [fname, op] : funcs) {
            if (name == fname) {
                if (!accept('(')) fail("expected '(' after " + std::string(fname));
                ExprPtr arg = expr();
                if (!accept(')')) fail("expected ')'");
                return ExprNode::unary(op, arg);
            }
        }
        pos_ = start;
        throw SyntaxError(start, std::string(name), "unknown identifier");
    }

    std::string_view src_;
    std::size_t k_;
    std::size_t pos_ = 0;
};

ExprPtr substitute(const ExprPtr& node, const std::vector<ExprPtr>& args) {
    switch (node->op) {
        case Op::Const: return node;
        case Op::Var: return args.at(node->var - 1);
        default: {
            auto n = std::make_shared<ExprNode>(*node);
            n->lhs = substitute(node->lhs, args);
            if (node->rhs) n->rhs = substitute(node->rhs, args);
            return n;
        }
    }
}

int max_var(const ExprPtr& node) {
    if (!node) return 0;
    if (node->op == Op::Var) return node->var;
    return std::max(max_var(node->lhs), max_var(node->rhs));
}

}  // namespace

// -------------------------------------------------------------------- MapExpr

MapExpr::MapExpr(std::size_t k, std::vector<ExprPtr> coords)
    : k_(k), n_(coords.size()), coords_(std::move(coords)) {
    if (k_ == 0 || n_ == 0) throw DimensionError("map dimensions must be positive");
    for (const auto& c : coords_) {
        if (!c) throw Error("null coordinate expression");
        if (static_cast<std::size_t>(max_var(c)) > k_)
            throw UnknownVariable("coordinate references a variable beyond x" +
                                  std::to_string(k_));
    }
}

MapExpr::MapExpr(std::size_t k, std::size_t n, std::shared_ptr<const Callback> cb)
    : k_(k), n_(n), callback_(std::move(cb)) {
    if (k_ == 0 || n_ == 0) throw DimensionError("map dimensions must be positive");
}

MapExpr MapExpr::from_callback(std::size_t k, std::size_t n, ValueFn value, JacobianFn jacobian) {
    if (!value) throw Error("callback map needs a value function");
    return MapExpr(k, n, std::make_shared<const Callback>(Callback{std::move(value), std::move(jacobian)}));
}

void MapExpr::check_input(std::span<const double> x) const {
    if (x.size() != k_)
        throw DimensionError("map expects " + std::to_string(k_) + " inputs, got " +
                             std::to_string(x.size()));
}

void MapExpr::eval_into(std::span<const double> x, std::span<double> out) const {
    check_input(x);
    if (out.size() != n_) throw DimensionError("output span has wrong length");
    if (callback_) {
        callback_->value(x, out);
        for (double v : out) checked(v, "callback map");
        return;
    }
    for (std::size_t i = 0; i < n_; ++i) out[i] = eval_tree(coords_[i], x);
}

Point MapExpr::eval(std::span<const double> x) const {
    Point out(n_);
    eval_into(x, out);
    return out;
}

std::vector<DualVector> MapExpr::eval_dual(std::span<const DualVector> x) const {
    if (x.size() != k_) throw DimensionError("dual input has wrong length");
    if (callback_) throw Error("dual evaluation is not available for callback maps");
    std::vector<DualVector> out;
    out.reserve(n_);
    for (const auto& c : coords_) out.push_back(eval_tree(c, x));
    return out;
}

Eigen::MatrixXd MapExpr::jacobian(std::span<const double> x) const {
    check_input(x);
    Eigen::MatrixXd jac(n_, k_);
    if (callback_) {
        if (callback_->jacobian) {
            callback_->jacobian(x, jac);
            return jac;
        }
        Point xp(x.begin(), x.end());
        Point fp(n_), fm(n_);
        for (std::size_t j = 0; j < k_; ++j) {
            const double h = 1e-6 * std::max(1.0, std::fabs(x[j]));
            xp[j] = x[j] + h;
            callback_->value(xp, fp);
            xp[j] = x[j] - h;
            callback_->value(xp, fm);
            xp[j] = x[j];
            for (std::size_t i = 0; i < n_; ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
        }
        return jac;
    }
    std::vector<DualVector> xd;
    xd.reserve(k_);
    for (std::size_t j = 0; j < k_; ++j) xd.push_back(DualVector::variable(x[j], k_, j));
    for (std::size_t i = 0; i < n_; ++i) {
        const DualVector d = eval_tree(coords_[i], std::span<const DualVector>(xd));
        for (std::size_t j = 0; j < k_; ++j) jac(i, j) = d.partials()[j];
    }
    return jac;
}

std::string MapExpr::to_string() const {
    if (callback_) throw Error("callback maps have no textual form");
    std::string s;
    for (std::size_t i = 0; i < n_; ++i) {
        if (i) s += "; ";
        s += unparse(coords_[i]);
    }
    return s;
}

MapExpr parse_map(std::string_view source, std::size_t k, std::size_t n) {
    if (k == 0 || n == 0) throw DimensionError("map dimensions must be positive");
    Parser p(source, k);
    auto coords = p.parse_all();
    if (coords.size() != n)
        throw ArityError("expected " + std::to_string(n) + " coordinate expressions, got " +
                         std::to_string(coords.size()));
    return MapExpr(k, std::move(coords));
}

MapExpr compose(const MapExpr& outer, const MapExpr& inner) {
    if (outer.input_dim() != inner.output_dim())
        throw DimensionError("composition dimension mismatch");
    if (!outer.is_expression() || !inner.is_expression())
        throw Error("composition requires expression maps");
    std::vector<ExprPtr> coords;
    for (const auto& c : outer.coords()) coords.push_back(substitute(c, inner.coords()));
    return MapExpr(inner.input_dim(), std::move(coords));
}

MapExpr identity_map(std::size_t k) {
    std::vector<ExprPtr> coords;
    for (std::size_t i = 1; i <= k; ++i) coords.push_back(ExprNode::variable(static_cast<int>(i)));
    return MapExpr(k, std::move(coords));
}

nlohmann::json map_to_json(const MapExpr& m) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& c : m.coords()) coords.push_back(unparse(c));
    return {{"k", m.input_dim()}, {"n", m.output_dim()}, {"coords", coords}};
}

MapExpr map_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("k") || !j.contains("n") || !j.contains("coords") ||
        !j["coords"].is_array())
        throw Error(R"(map JSON must have the form {"k":int,"n":int,"coords":[...]})");
    const auto k = j["k"].get<std::size_t>();
    const auto n = j["n"].get<std::size_t>();
    std::string src;
    for (std::size_t i = 0; i < j["coords"].size(); ++i) {
        if (i) src += ";";
        src += j["coords"][i].get<std::string>();
    }
    return parse_map(src, k, n);
}

}  // namespace coarea
