#include "splitfix/splitting.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <sstream>

#include "splitfix/errors.hpp"
#include "splitfix/parallel.hpp"

namespace splitfix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_band(const char* name, std::size_t n, double v, double lo, double hi) {
    std::ostringstream os;
    os << name << "_" << n << " = " << v << " outside [" << lo << ", " << hi << "]";
    return os.str();
}

bool outside(double v, double lo, double hi) { return !(v >= lo && v <= hi); }

// n == 0 violations are up-front errors; later ones end the run with a flagged trace.
IterTrace stop_on_violation(TraceRecorder& rec, const Vector& x, std::size_t n, const std::string& rule,
                            const std::string& problem) {
    if (n == 0) throw PreconditionError(rule, problem);
    IterTrace t = rec.finish(x);
    t.status = Status::PreconditionViolated;
    t.metadata["violation"] = problem;
    t.metadata["rule"] = rule;
    return t;
}

RelaxationSchedule lambda_of(const SplitOptions& opt) {
    return opt.lambda.value_or(RelaxationSchedule::constant(1.0));
}

void require_schedule(double alpha, const RelaxationSchedule& s, const char* rule) {
    auto v = validate_relaxation_schedule(alpha, s);
    if (!v.valid) throw PreconditionError(rule, v.reason);
}

void require_eps(double eps) {
    if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("eps must lie in (0, 1/2)");
}

void require_dim(Index got, Index want, const char* what) {
    if (got != want) throw DimensionError(std::string(what) + ": dimension mismatch");
}

Vector concat(const Vector& a, const Vector& b) {
    Vector out(a.size() + b.size());
    out << a, b;
    return out;
}

std::vector<Index> offsets_of(const std::vector<Index>& dims) {
    std::vector<Index> off(dims.size() + 1, 0);
    for (std::size_t i = 0; i < dims.size(); ++i) off[i + 1] = off[i] + dims[i];
    return off;
}

void sync_dual(const IterTrace& t, std::vector<Vector>& duals, const Vector& v) {
    while (duals.size() < t.snapshots.size()) duals.push_back(v);
}

PrimalDualTrace wrap(IterTrace primal, std::vector<Vector> duals, const Vector& v) {
    PrimalDualTrace out;
    sync_dual(primal, duals, v);
    out.primal = std::move(primal);
    out.dual_snapshots = std::move(duals);
    out.v = v;
    return out;
}

double min_cocoercivity(const CompositeProblem& p) {
    double beta = kInf;
    for (const auto& t : p.terms) {
        if (!t.C) continue;
        auto b = t.C->cocoercivity();
        if (!b) throw PreconditionError("cocoercivity", "operator C_k '" + t.C->name() + "' has no cocoercivity constant");
        beta = std::min(beta, *b);
    }
    return beta;
}

void check_composite(const CompositeProblem& p, const char* who) {
    if (p.terms.empty()) throw std::invalid_argument(std::string(who) + ": at least one term required");
    Index n = p.dim();
    if (p.A && p.A->dim() != n) throw DimensionError(std::string(who) + ": A dimension differs from L_k domain");
    for (std::size_t k = 0; k < p.terms.size(); ++k) {
        const auto& t = p.terms[k];
        if (t.L.in_dim() != n) throw DimensionError(std::string(who) + ": L_k domains differ");
        if (t.B.dim() != t.L.out_dim()) throw DimensionError(std::string(who) + ": B_k dimension differs from L_k range");
        if (t.C && t.C->dim() != t.L.out_dim())
            throw DimensionError(std::string(who) + ": C_k dimension differs from L_k range");
        if (t.L.to_matrix().cwiseAbs().maxCoeff() == 0.0)
            throw std::invalid_argument(std::string(who) + ": L_" + std::to_string(k + 1) + " is the zero map");
    }
}

Vector apply_C(const CompositeTerm& t, const Vector& y) { return t.C ? (*t.C)(y) : Vector::Zero(y.size()); }

Vector resolvent_A(const std::optional<MonotoneOp>& A, double g, const Vector& x) {
    return A ? A->resolvent(g, x) : x;
}

// J_{g B^{-1}} w = w - g J_{B/g}(w/g)
Vector inverse_resolvent(const MonotoneOp& B, double g, const Vector& w) {
    return w - g * B.resolvent(1.0 / g, w / g);
}

}  // namespace

// ---- problem types --------------------------------------------------------

Index CompositeProblem::dim() const {
    if (A) return A->dim();
    if (terms.empty()) throw std::invalid_argument("CompositeProblem: no terms");
    return terms.front().L.in_dim();
}

std::vector<Index> CompositeProblem::dual_dims() const {
    std::vector<Index> d;
    for (const auto& t : terms) d.push_back(t.L.out_dim());
    return d;
}

std::vector<Index> SystemProblem::primal_dims() const {
    std::vector<Index> d;
    for (const auto& a : A) d.push_back(a.dim());
    return d;
}

std::vector<Index> SystemProblem::dual_dims() const {
    std::vector<Index> d;
    for (const auto& b : B) d.push_back(b.dim());
    return d;
}

void SystemProblem::validate() const {
    if (A.empty() || B.empty()) throw std::invalid_argument("SystemProblem: empty operator family");
    if (L.size() != B.size()) throw DimensionError("SystemProblem: L needs one row per B_k");
    for (std::size_t k = 0; k < L.size(); ++k) {
        if (L[k].size() != A.size()) throw DimensionError("SystemProblem: L needs one column per A_i");
        for (std::size_t i = 0; i < A.size(); ++i) {
            if (!L[k][i]) continue;
            if (L[k][i]->in_dim() != A[i].dim() || L[k][i]->out_dim() != B[k].dim())
                throw DimensionError("SystemProblem: L_ki shape mismatch");
        }
    }
}

Vector SystemProblem::forward(const Vector& x) const {
    auto po = offsets_of(primal_dims()), dof = offsets_of(dual_dims());
    Vector out = Vector::Zero(dof.back());
    for (std::size_t k = 0; k < B.size(); ++k)
        for (std::size_t i = 0; i < A.size(); ++i)
            if (L[k][i]) out.segment(dof[k], B[k].dim()) += L[k][i]->apply(x.segment(po[i], A[i].dim()));
    return out;
}

Vector SystemProblem::adjoint(const Vector& v) const {
    auto po = offsets_of(primal_dims()), dof = offsets_of(dual_dims());
    Vector out = Vector::Zero(po.back());
    for (std::size_t k = 0; k < B.size(); ++k)
        for (std::size_t i = 0; i < A.size(); ++i)
            if (L[k][i]) out.segment(po[i], A[i].dim()) += L[k][i]->apply_adjoint(v.segment(dof[k], B[k].dim()));
    return out;
}

StepSize StepSize::sequence(std::function<double(std::size_t)> fn) {
    StepSize s;
    s.kind_ = Kind::Sequence;
    s.fn_ = std::move(fn);
    return s;
}

double StepSize::at(std::size_t n, double lo, double hi) const {
    switch (kind_) {
        case Kind::Constant: return value_;
        case Kind::Sequence: return fn_(n);
        case Kind::Auto: break;
    }
    if (std::isfinite(hi)) return 0.5 * (lo + hi);
    return std::max(lo, 1.0);
}

// ---- two and three operators ----------------------------------------------

IterTrace douglas_rachford(const InclusionProblem& p, const Vector& y0, const SplitOptions& opt,
                           const StopRule& stop) {
    require_dim(p.A.dim(), p.B.dim(), "douglas_rachford");
    require_dim(y0.size(), p.A.dim(), "douglas_rachford");
    if (!opt.gamma.constant()) throw std::invalid_argument("douglas_rachford: gamma must be constant");
    const double g = opt.gamma.at(0, 1.0, 1.0);
    if (!(g > 0)) throw PreconditionError("Douglas-Rachford step", "gamma must be positive");
    auto lam = lambda_of(opt);
    require_schedule(0.5, lam, "Douglas-Rachford relaxation");

    TraceRecorder rec(stop, y0, opt.objective);
    Vector y = y0;
    for (std::size_t n = 0;; ++n) {
        Vector x = p.B.resolvent(g, y);
        Vector z = p.A.resolvent(g, 2.0 * x - y);
        if (rec.check((z - x).norm(), x)) break;
        Vector yn = y + lam.at(n) * (z - x);
        bool halt = rec.advance(y, yn);
        y = std::move(yn);
        if (halt) break;
    }
    IterTrace t = rec.finish(p.B.resolvent(g, y));
    t.metadata["gamma"] = std::to_string(g);
    return t;
}

IterTrace tseng_fbf(const InclusionProblem& p, const Vector& x0, const SplitOptions& opt, const StopRule& stop) {
    require_dim(p.A.dim(), p.B.dim(), "tseng_fbf");
    require_dim(x0.size(), p.A.dim(), "tseng_fbf");
    require_eps(opt.eps);
    if (!p.B.is_single_valued()) throw std::invalid_argument("tseng_fbf: B must be single-valued");
    auto delta = p.B.lipschitz();
    if (!delta) throw PreconditionError("forward-backward-forward step band", "B has no Lipschitz constant");
    const double lo = opt.eps, hi = *delta > 0 ? (1.0 - opt.eps) / *delta : kInf;

    TraceRecorder rec(stop, x0, opt.objective);
    Vector x = x0;
    for (std::size_t n = 0;; ++n) {
        double g = opt.gamma.at(n, lo, hi);
        if (outside(g, lo, hi))
            return stop_on_violation(rec, x, n, "forward-backward-forward step band", fmt_band("gamma", n, g, lo, hi));
        Vector y = x - g * p.B(x);
        Vector z = p.A.resolvent(g, y);
        if (rec.check((z - x).norm(), x)) break;
        Vector r = z - g * p.B(z);
        Vector xn = x - y + r;
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    return rec.finish(x);
}

IterTrace forward_backward(const InclusionProblem& p, const Vector& x0, const SplitOptions& opt,
                           const StopRule& stop) {
    require_dim(p.A.dim(), p.B.dim(), "forward_backward");
    require_dim(x0.size(), p.A.dim(), "forward_backward");
    require_eps(opt.eps);
    if (!p.B.is_single_valued()) throw std::invalid_argument("forward_backward: B must be single-valued");
    auto beta = p.B.cocoercivity();
    if (!beta) throw PreconditionError("forward-backward step band", "B has no cocoercivity constant");
    const double b = *beta;
    const double glo = opt.eps, ghi = 2.0 * b / (1.0 + opt.eps);
    auto lam = lambda_of(opt);

    TraceRecorder rec(stop, x0, opt.objective);
    Vector x = x0;
    for (std::size_t n = 0;; ++n) {
        double g = opt.gamma.at(n, glo, ghi);
        if (outside(g, glo, ghi))
            return stop_on_violation(rec, x, n, "forward-backward step band", fmt_band("gamma", n, g, glo, ghi));
        double l = lam.at(n);
        double lhi = (1.0 - opt.eps) * (2.0 + opt.eps - (std::isfinite(b) ? g / (2.0 * b) : 0.0));
        if (outside(l, opt.eps, lhi))
            return stop_on_violation(rec, x, n, "forward-backward relaxation band",
                                     fmt_band("lambda", n, l, opt.eps, lhi));
        Vector u = x - g * p.B(x);
        Vector ju = p.A.resolvent(g, u);
        if (rec.check((ju - x).norm(), x)) break;
        Vector xn = x + l * (ju - x);
        bool halt = rec.advance(x, xn);
        x = std::move(xn);
        if (halt) break;
    }
    return rec.finish(x);
}

IterTrace davis_yin(const InclusionProblem& p, const Vector& y0, const SplitOptions& opt, const StopRule& stop) {
    require_dim(p.A.dim(), p.B.dim(), "davis_yin");
    require_dim(y0.size(), p.A.dim(), "davis_yin");
    if (p.C) require_dim(p.C->dim(), p.A.dim(), "davis_yin");
    if (!opt.gamma.constant()) throw std::invalid_argument("davis_yin: gamma must be constant");
    double beta = kInf;
    if (p.C) {
        auto b = p.C->cocoercivity();
        if (!b) throw PreconditionError("three-operator step", "C has no cocoercivity constant");
        beta = *b;
    }
    const double g = opt.gamma.at(0, 0.0, 2.0 * beta);
    if (!(g > 0 && g < 2.0 * beta)) {
        std::ostringstream os;
        os << "gamma = " << g << " outside (0, " << 2.0 * beta << ")";
        throw PreconditionError("three-operator step", os.str());
    }
    const double alpha = std::isfinite(beta) ? 2.0 * beta / (4.0 * beta - g) : 0.5;
    auto lam = lambda_of(opt);
    require_schedule(alpha, lam, "three-operator relaxation");

    TraceRecorder rec(stop, y0, opt.objective);
    Vector y = y0;
    for (std::size_t n = 0;; ++n) {
        Vector x = p.B.resolvent(g, y);
        Vector r = p.C ? Vector(y + g * (*p.C)(x)) : y;
        Vector z = p.A.resolvent(g, 2.0 * x - r);
        if (rec.check((z - x).norm(), x)) break;
        Vector yn = y + lam.at(n) * (z - x);
        bool halt = rec.advance(y, yn);
        y = std::move(yn);
        if (halt) break;
    }
    IterTrace t = rec.finish(p.B.resolvent(g, y));
    t.metadata["alpha"] = std::to_string(alpha);
    return t;
}

PrimalDualTrace three_op_primal_dual(const InclusionProblem& p, const Vector& x0, const Vector& u0,
                                     const SplitOptions& opt, const StopRule& stop) {
    require_dim(p.A.dim(), p.B.dim(), "three_op_primal_dual");
    require_dim(x0.size(), p.A.dim(), "three_op_primal_dual");
    require_dim(u0.size(), p.A.dim(), "three_op_primal_dual");
    require_eps(opt.eps);
    double delta = 0.0;
    if (p.C) {
        auto d = p.C->lipschitz();
        if (!d) throw PreconditionError("primal-dual step band", "C has no Lipschitz constant");
        delta = *d;
    }
    const double lo = opt.eps, hi = (1.0 - opt.eps) / (1.0 + delta);
    auto Cof = [&](const Vector& v) { return p.C ? (*p.C)(v) : Vector::Zero(v.size()); };

    TraceRecorder rec(stop, concat(x0, u0), opt.objective);
    Vector x = x0, u = u0;
    std::vector<Vector> duals;
    double g = lo;
    for (std::size_t n = 0;; ++n) {
        g = opt.gamma.at(n, lo, hi);
        if (outside(g, lo, hi)) {
            auto t = stop_on_violation(rec, x, n, "primal-dual step band", fmt_band("gamma", n, g, lo, hi));
            return wrap(std::move(t), std::move(duals), u);
        }
        Vector y = x - g * (Cof(x) + u);
        Vector pp = p.A.resolvent(g, y);
        Vector q = u + g * (x - p.B.resolvent(1.0 / g, u / g + x));
        double r = std::sqrt((pp - x).squaredNorm() + (q - u).squaredNorm());
        bool conv = rec.check(r, x);
        sync_dual(rec.trace(), duals, u);
        if (conv) break;
        Vector xn = x - y + pp - g * (Cof(pp) + q);
        Vector un = q + g * (pp - x);
        bool halt = rec.advance(concat(x, u), concat(xn, un));
        x = std::move(xn);
        u = std::move(un);
        if (halt) break;
    }
    auto out = wrap(rec.finish(x), std::move(duals), u);
    // 0 in A x + C x + u with u in B x
    out.kkt_primal = (p.A.resolvent(g, x - g * (Cof(x) + u)) - x).norm();
    out.kkt_dual = (inverse_resolvent(p.B, g, u + g * x) - u).norm();
    return out;
}

// ---- composite problems ---------------------------------------------------

ProductSpace product_space_lift(const std::vector<CompositeTerm>& terms) {
    if (terms.empty()) throw std::invalid_argument("product_space_lift: no terms");
    const Index n = terms.front().L.in_dim();
    std::vector<Index> dims;
    for (const auto& t : terms) {
        if (t.L.in_dim() != n) throw DimensionError("product_space_lift: L_k domains differ");
        if (t.B.dim() != t.L.out_dim() || (t.C && t.C->dim() != t.L.out_dim()))
            throw DimensionError("product_space_lift: operator and L_k range dimensions differ");
        dims.push_back(t.L.out_dim());
    }
    auto off = offsets_of(dims);
    const Index total = off.back();
    auto shared = std::make_shared<std::vector<CompositeTerm>>(terms);

    MonotoneOp B(
        total,
        [shared, off](double g, const Vector& y) {
            Vector out(y.size());
            for (std::size_t k = 0; k < shared->size(); ++k) {
                Index d = off[k + 1] - off[k];
                out.segment(off[k], d) = (*shared)[k].B.resolvent(g, y.segment(off[k], d));
            }
            return out;
        },
        {}, std::nullopt, std::nullopt, "product B");

    std::optional<MonotoneOp> C;
    bool anyC = std::any_of(terms.begin(), terms.end(), [](const CompositeTerm& t) { return t.C.has_value(); });
    if (anyC) {
        double beta = kInf, delta = 0.0;
        bool have_beta = true, have_delta = true;
        for (const auto& t : terms) {
            if (!t.C) continue;
            if (auto b = t.C->cocoercivity()) beta = std::min(beta, *b); else have_beta = false;
            if (auto d = t.C->lipschitz()) delta = std::max(delta, *d); else have_delta = false;
        }
        C = MonotoneOp::single_valued(
            total,
            [shared, off](const Vector& y) {
                Vector out = Vector::Zero(y.size());
                for (std::size_t k = 0; k < shared->size(); ++k) {
                    Index d = off[k + 1] - off[k];
                    out.segment(off[k], d) = apply_C((*shared)[k], y.segment(off[k], d));
                }
                return out;
            },
            have_beta ? std::optional<double>(beta) : std::nullopt,
            have_delta ? std::optional<double>(delta) : std::nullopt, "product C");
    }

    LinMap L(
        n, total,
        [shared, off](const Vector& x) {
            Vector out(off.back());
            for (std::size_t k = 0; k < shared->size(); ++k)
                out.segment(off[k], off[k + 1] - off[k]) = (*shared)[k].L.apply(x);
            return out;
        },
        [shared, off, n](const Vector& y) {
            Vector out = Vector::Zero(n);
            for (std::size_t k = 0; k < shared->size(); ++k)
                out += (*shared)[k].L.apply_adjoint(y.segment(off[k], off[k + 1] - off[k]));
            return out;
        });

    Matrix Lm = L.to_matrix();
    Matrix Q = Lm.transpose() * Lm;
    // least squares: proj_V y = L Q^+ L^* y
    auto eig = sym_eig(Q);
    double top = eig.values.size() ? eig.values.maxCoeff() : 0.0;
    Vector inv = eig.values.unaryExpr([top](double l) { return l > 1e-12 * std::max(1.0, top) ? 1.0 / l : 0.0; });
    auto P = std::make_shared<Matrix>(Lm * eig.vectors * inv.asDiagonal() * eig.vectors.transpose() * Lm.transpose());
    SetDescriptor V = SetDescriptor::custom(total, [P](const Vector& y) { return Vector(*P * y); }, "range of L");

    return ProductSpace{dims, std::move(B), std::move(C), std::move(L), std::move(V), std::move(Q)};
}

IterTrace composite_dy(const CompositeProblem& p, const Vector& y0, const SplitOptions& opt, const StopRule& stop) {
    check_composite(p, "composite_dy");
    if (p.A) throw std::invalid_argument("composite_dy: A must be absent (A = 0)");
    if (!opt.gamma.constant()) throw std::invalid_argument("composite_dy: gamma must be constant");
    const std::size_t q = p.terms.size();
    const Index n = p.dim();
    auto dd = p.dual_dims();
    auto off = offsets_of(dd);
    require_dim(y0.size(), off.back(), "composite_dy");

    Matrix Q = Matrix::Zero(n, n);
    for (const auto& t : p.terms) {
        Matrix Lm = t.L.to_matrix();
        Q += Lm.transpose() * Lm;
    }
    auto eig = sym_eig(Q);
    if (!(eig.values(0) > 1e-10 * std::max(1.0, eig.values.maxCoeff())))
        throw PreconditionError("composite invertibility", "sum of L_k^* L_k is singular");
    Eigen::LLT<Matrix> Qf(Q);

    const double beta = min_cocoercivity(p);
    const double g = opt.gamma.at(0, 0.0, 2.0 * beta);
    if (!(g > 0 && g < 2.0 * beta)) {
        std::ostringstream os;
        os << "gamma = " << g << " outside (0, " << 2.0 * beta << ")";
        throw PreconditionError("three-operator step", os.str());
    }
    const double alpha = std::isfinite(beta) ? 2.0 * beta / (4.0 * beta - g) : 0.5;
    auto lam = lambda_of(opt);
    require_schedule(alpha, lam, "three-operator relaxation");

    auto adj_sum = [&](const std::vector<Vector>& blocks) {
        Vector s = Vector::Zero(n);
        for (std::size_t k = 0; k < q; ++k) s += p.terms[k].L.apply_adjoint(blocks[k]);
        return s;
    };
    std::vector<Vector> y(q), pk(q), ck(q);
    for (std::size_t k = 0; k < q; ++k) y[k] = y0.segment(off[k], dd[k]);
    Vector s = Qf.solve(adj_sum(y));

    auto flat = [&](const std::vector<Vector>& b) {
        Vector out(off.back());
        for (std::size_t k = 0; k < q; ++k) out.segment(off[k], dd[k]) = b[k];
        return out;
    };
    auto primal = [&](const std::vector<Vector>& yy) {
        std::vector<Vector> pp(q);
        for (std::size_t k = 0; k < q; ++k) pp[k] = p.terms[k].B.resolvent(g, yy[k]);
        return Vector(Qf.solve(adj_sum(pp)));
    };

    TraceRecorder rec(stop, y0, opt.objective);
    for (std::size_t it = 0;; ++it) {
        parallel_for(q, [&](std::size_t k) {
            pk[k] = p.terms[k].B.resolvent(g, y[k]);
            ck[k] = apply_C(p.terms[k], pk[k]);
        });
        Vector x = Qf.solve(adj_sum(pk));
        Vector c = Qf.solve(adj_sum(ck));
        Vector z = x - s - g * c;
        // the dual blocks move along L_k (x + z) - p_k, the range-of-L component of the reflected point
        std::vector<Vector> d(q);
        double r2 = z.squaredNorm();
        for (std::size_t k = 0; k < q; ++k) {
            d[k] = p.terms[k].L.apply(x + z) - pk[k];
            r2 += d[k].squaredNorm();
        }
        if (rec.check(std::sqrt(r2), x)) break;
        double l = lam.at(it);
        std::vector<Vector> yn(q);
        for (std::size_t k = 0; k < q; ++k) yn[k] = y[k] + l * d[k];
        s += l * z;
        bool halt = rec.advance(flat(y), flat(yn));
        y = std::move(yn);
        if (halt) break;
    }
    IterTrace t = rec.finish(primal(y));
    t.metadata["alpha"] = std::to_string(alpha);
    return t;
}

double mlfb_chi(const CompositeProblem& p) {
    double sumsq = 0.0, delta = 0.0;
    for (const auto& t : p.terms) {
        double nl = operator_norm_bound(t.L);
        sumsq += nl * nl;
        if (t.C) {
            auto d = t.C->lipschitz();
            if (!d) throw PreconditionError("primal-dual step band", "C_k '" + t.C->name() + "' has no Lipschitz constant");
            delta = std::max(delta, *d);
        }
    }
    double r = std::sqrt(sumsq);
    return r * (1.0 + delta * r);
}

PrimalDualTrace mlfb_primal_dual(const CompositeProblem& p, const Vector& x0, const Vector& v0,
                                 const SplitOptions& opt, const StopRule& stop) {
    check_composite(p, "mlfb_primal_dual");
    require_eps(opt.eps);
    const std::size_t q = p.terms.size();
    const Index n = p.dim();
    auto dd = p.dual_dims();
    auto off = offsets_of(dd);
    require_dim(x0.size(), n, "mlfb_primal_dual");
    require_dim(v0.size(), off.back(), "mlfb_primal_dual");
    const double chi = mlfb_chi(p);
    const double lo = opt.eps, hi = (1.0 - opt.eps) / chi;

    Vector x = x0, v = v0;
    std::vector<Vector> Lx(q), Lp(q), zk(q);
    std::vector<Vector> duals;
    TraceRecorder rec(stop, concat(x0, v0), opt.objective);
    double g = lo;
    for (std::size_t it = 0;; ++it) {
        g = opt.gamma.at(it, lo, hi);
        if (outside(g, lo, hi)) {
            auto t = stop_on_violation(rec, x, it, "primal-dual step band", fmt_band("gamma", it, g, lo, hi));
            return wrap(std::move(t), std::move(duals), v);
        }
        std::vector<Vector> fwd(q);
        parallel_for(q, [&](std::size_t k) {
            Lx[k] = p.terms[k].L.apply(x);
            fwd[k] = p.terms[k].L.apply_adjoint(apply_C(p.terms[k], Lx[k]) + v.segment(off[k], dd[k]));
        });
        Vector u = x;
        for (const auto& f : fwd) u -= g * f;
        Vector pp = resolvent_A(p.A, g, u);
        Vector vn = v;
        double dual2 = 0.0;
        std::vector<Vector> back(q);
        std::vector<double> dn(q);
        parallel_for(q, [&](std::size_t k) {
            Vector vk = v.segment(off[k], dd[k]);
            Vector y = vk + g * Lx[k];
            zk[k] = y - g * p.terms[k].B.resolvent(1.0 / g, y / g);
            Lp[k] = p.terms[k].L.apply(pp);
            Vector s = zk[k] + g * Lp[k];
            vn.segment(off[k], dd[k]) = vk - y + s;
            dn[k] = (zk[k] - vk).squaredNorm();
            back[k] = p.terms[k].L.apply_adjoint(apply_C(p.terms[k], Lp[k]) + zk[k]);
        });
        for (double d : dn) dual2 += d;
        bool conv = rec.check(std::sqrt((pp - x).squaredNorm() + dual2), x);
        sync_dual(rec.trace(), duals, v);
        if (conv) break;
        Vector r = pp;
        for (const auto& b : back) r -= g * b;
        Vector xn = x - u + r;
        bool halt = rec.advance(concat(x, v), concat(xn, vn));
        x = std::move(xn);
        v = std::move(vn);
        if (halt) break;
    }
    auto out = wrap(rec.finish(x), std::move(duals), v);
    auto [kp, kd] = kkt_residuals(p, x, v, g);
    out.kkt_primal = kp;
    out.kkt_dual = kd;
    out.primal.metadata["chi"] = std::to_string(chi);
    return out;
}

double preconditioned_kappa(const CompositeProblem& p, const Matrix& W) {
    check_composite(p, "preconditioned_kappa");
    Matrix Lm(0, p.dim());
    for (const auto& t : p.terms) {
        Matrix m = t.L.to_matrix();
        Matrix stacked(Lm.rows() + m.rows(), Lm.cols());
        stacked << Lm, m;
        Lm = std::move(stacked);
    }
    return spectral_norm(Lm * W * Lm.transpose());
}

PrimalDualTrace preconditioned_fb_pd(const CompositeProblem& p, const Matrix& W, double sigma, const Vector& x0,
                                     const Vector& v0, const SplitOptions& opt, const StopRule& stop) {
    check_composite(p, "preconditioned_fb_pd");
    if (p.A) throw std::invalid_argument("preconditioned_fb_pd: A must be absent (A = 0)");
    const std::size_t q = p.terms.size();
    const Index n = p.dim();
    auto dd = p.dual_dims();
    auto off = offsets_of(dd);
    require_dim(x0.size(), n, "preconditioned_fb_pd");
    require_dim(v0.size(), off.back(), "preconditioned_fb_pd");
    if (W.rows() != n || W.cols() != n) throw DimensionError("preconditioned_fb_pd: W shape");
    if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, W.cwiseAbs().maxCoeff()))
        throw PreconditionError("preconditioner", "W must be self-adjoint");
    auto ew = sym_eig(W);
    if (!(ew.values(0) > 1e-10 * std::max(1.0, ew.values.maxCoeff())))
        throw PreconditionError("preconditioner", "W must be strictly positive");
    if (!(sigma > 0)) throw PreconditionError("preconditioned step", "sigma must be positive");

    const double beta = min_cocoercivity(p);
    const double kappa = preconditioned_kappa(p, W);
    if (!(kappa < std::min(1.0 / sigma, 2.0 * beta))) {
        std::ostringstream os;
        os << "kappa = " << kappa << " must be below min(1/sigma, 2 beta) = " << std::min(1.0 / sigma, 2.0 * beta);
        throw PreconditionError("preconditioned step", os.str());
    }
    const double eps = opt.eps;
    if (!(eps > 0 && eps < std::min(0.5, beta / kappa)))
        throw std::invalid_argument("preconditioned_fb_pd: eps must lie in (0, min(1/2, beta/kappa))");
    const double lhi = (1.0 - eps) * (2.0 + eps - (std::isfinite(beta) ? kappa / (2.0 * beta) : 0.0));
    auto lam = lambda_of(opt);

    Vector x = x0, v = v0;
    std::vector<Vector> duals;
    TraceRecorder rec(stop, concat(x0, v0), opt.objective);
    for (std::size_t it = 0;; ++it) {
        double l = lam.at(it);
        if (outside(l, eps, lhi)) {
            auto t = stop_on_violation(rec, x, it, "preconditioned relaxation band", fmt_band("lambda", it, l, eps, lhi));
            return wrap(std::move(t), std::move(duals), v);
        }
        std::vector<Vector> sk(q), yk(q), a1(q), a2(q);
        parallel_for(q, [&](std::size_t k) {
            sk[k] = apply_C(p.terms[k], p.terms[k].L.apply(x));
            a1[k] = p.terms[k].L.apply_adjoint(sk[k] + v.segment(off[k], dd[k]));
        });
        Vector sum1 = Vector::Zero(n);
        for (const auto& a : a1) sum1 += a;
        Vector z = x - W * sum1;
        std::vector<double> dn(q);
        parallel_for(q, [&](std::size_t k) {
            Vector vk = v.segment(off[k], dd[k]);
            Vector w = vk + sigma * p.terms[k].L.apply(z);
            yk[k] = w - sigma * p.terms[k].B.resolvent(1.0 / sigma, w / sigma);
            a2[k] = p.terms[k].L.apply_adjoint(sk[k] + yk[k]);
            dn[k] = (yk[k] - vk).squaredNorm();
        });
        Vector sum2 = Vector::Zero(n);
        for (const auto& a : a2) sum2 += a;
        Vector u = x - W * sum2;
        double dual2 = 0.0;
        for (double d : dn) dual2 += d;
        bool conv = rec.check(std::sqrt((u - x).squaredNorm() + dual2), x);
        sync_dual(rec.trace(), duals, v);
        if (conv) break;
        Vector vn = v;
        for (std::size_t k = 0; k < q; ++k) vn.segment(off[k], dd[k]) += l * (yk[k] - v.segment(off[k], dd[k]));
        Vector xn = x + l * (u - x);
        bool halt = rec.advance(concat(x, v), concat(xn, vn));
        x = std::move(xn);
        v = std::move(vn);
        if (halt) break;
    }
    auto out = wrap(rec.finish(x), std::move(duals), v);
    auto [kp, kd] = kkt_residuals(p, x, v, 1.0);
    out.kkt_primal = kp;
    out.kkt_dual = kd;
    out.primal.metadata["kappa"] = std::to_string(kappa);
    return out;
}

std::pair<double, double> kkt_residuals(const CompositeProblem& p, const Vector& x, const Vector& v, double gamma) {
    auto dd = p.dual_dims();
    auto off = offsets_of(dd);
    Vector grad = Vector::Zero(x.size());
    double dual2 = 0.0;
    for (std::size_t k = 0; k < p.terms.size(); ++k) {
        const auto& t = p.terms[k];
        Vector Lx = t.L.apply(x);
        Vector vk = v.segment(off[k], dd[k]);
        grad += t.L.apply_adjoint(vk + apply_C(t, Lx));
        dual2 += (inverse_resolvent(t.B, gamma, vk + gamma * Lx) - vk).squaredNorm();
    }
    double prim = (resolvent_A(p.A, gamma, x - gamma * grad) - x).norm();
    return {prim, std::sqrt(dual2)};
}

std::pair<double, double> kkt_residuals(const SystemProblem& p, const Vector& x, const Vector& v, double gamma) {
    p.validate();
    auto pd = p.primal_dims(), dd = p.dual_dims();
    auto po = offsets_of(pd), dof = offsets_of(dd);
    Vector Ltv = p.adjoint(v), Lx = p.forward(x);
    double prim2 = 0.0, dual2 = 0.0;
    for (std::size_t i = 0; i < p.A.size(); ++i) {
        Vector xi = x.segment(po[i], pd[i]);
        prim2 += (p.A[i].resolvent(gamma, xi - gamma * Ltv.segment(po[i], pd[i])) - xi).squaredNorm();
    }
    for (std::size_t k = 0; k < p.B.size(); ++k) {
        Vector vk = v.segment(dof[k], dd[k]);
        dual2 += (inverse_resolvent(p.B[k], gamma, vk + gamma * Lx.segment(dof[k], dd[k])) - vk).squaredNorm();
    }
    return {std::sqrt(prim2), std::sqrt(dual2)};
}

// ---- projective splitting ---------------------------------------------------

PrimalDualTrace projective_split(const SystemProblem& p, const Vector& x0, const Vector& v0,
                                 const ProjectiveOptions& opt, const StopRule& stop) {
    p.validate();
    const std::size_t m = p.A.size(), q = p.B.size();
    auto pd = p.primal_dims(), dd = p.dual_dims();
    auto po = offsets_of(pd), dof = offsets_of(dd);
    require_dim(x0.size(), po.back(), "projective_split");
    require_dim(v0.size(), dof.back(), "projective_split");
    require_eps(opt.eps);
    std::vector<double> gam = opt.gamma.empty() ? std::vector<double>(m, 1.0) : opt.gamma;
    std::vector<double> mu = opt.mu.empty() ? std::vector<double>(q, 1.0) : opt.mu;
    if (gam.size() != m || mu.size() != q) throw std::invalid_argument("projective_split: one step per index required");
    for (double g : gam)
        if (outside(g, opt.eps, 1.0 / opt.eps))
            throw PreconditionError("projective step bounds", fmt_band("gamma", 0, g, opt.eps, 1.0 / opt.eps));
    for (double g : mu)
        if (outside(g, opt.eps, 1.0 / opt.eps))
            throw PreconditionError("projective step bounds", fmt_band("mu", 0, g, opt.eps, 1.0 / opt.eps));

    BlockSchedule si = opt.primal_blocks.value_or(BlockSchedule::full(m));
    BlockSchedule sk = opt.dual_blocks.value_or(BlockSchedule::full(q));
    if (si.m() != m || sk.m() != q) throw std::invalid_argument("projective_split: schedule sizes differ from m, q");
    CoverageMonitor ci(m, si.window()), ck(q, sk.window());
    const std::size_t window = std::max(si.window(), sk.window());

    Vector x = x0, v = v0;
    Vector a(po.back()), as(po.back()), b(dof.back()), bs(dof.back());
    std::vector<Vector> duals;
    std::deque<double> recent;
    TraceRecorder rec(stop, concat(x0, v0), opt.objective);
    for (std::size_t n = 0;; ++n) {
        std::vector<std::size_t> I, K;
        if (n == 0) {
            for (std::size_t i = 0; i < m; ++i) I.push_back(i);
            for (std::size_t k = 0; k < q; ++k) K.push_back(k);
        } else {
            I = si.next();
            K = sk.next();
        }
        auto mi = ci.observe(I);
        auto mk = ck.observe(K);
        if (mi || mk) {
            std::string what = mi ? "primal index " + std::to_string(*mi) : "dual index " + std::to_string(*mk);
            auto t = stop_on_violation(rec, x, n, "coverage", what + " not used within the schedule window");
            return wrap(std::move(t), std::move(duals), v);
        }
        Vector Ltv = p.adjoint(v), Lx = p.forward(x);
        parallel_for(I.size(), [&](std::size_t j) {
            std::size_t i = I[j];
            Vector xi = x.segment(po[i], pd[i]), li = Ltv.segment(po[i], pd[i]);
            Vector ai = p.A[i].resolvent(gam[i], xi - gam[i] * li);
            a.segment(po[i], pd[i]) = ai;
            as.segment(po[i], pd[i]) = (xi - ai) / gam[i] - li;
        });
        parallel_for(K.size(), [&](std::size_t j) {
            std::size_t k = K[j];
            Vector l = Lx.segment(dof[k], dd[k]), vk = v.segment(dof[k], dd[k]);
            Vector bk = p.B[k].resolvent(mu[k], l + mu[k] * vk);
            b.segment(dof[k], dd[k]) = bk;
            bs.segment(dof[k], dd[k]) = vk + (l - bk) / mu[k];
        });
        Vector ts = as + p.adjoint(bs);
        Vector t = b - p.forward(a);
        double tau = ts.squaredNorm() + t.squaredNorm();
        double offset = a.dot(as) + b.dot(bs);
        // <x, t*> + <t, v> - offset, rearranged to avoid cancellation near the solution set
        double gap = (x - a).dot(ts) + t.dot(v - bs);
        double theta = tau > 0 ? std::max(0.0, gap / tau) : 0.0;
        if (opt.observer) opt.observer(ProjectiveStep{n, x, v, ts, t, offset, theta});

        recent.push_back(std::sqrt(tau + (x - a).squaredNorm() + (v - bs).squaredNorm()));
        if (recent.size() > window) recent.pop_front();
        double r = *std::max_element(recent.begin(), recent.end());
        bool conv = rec.check(r, x, recent.size() == window);
        sync_dual(rec.trace(), duals, v);
        if (conv) break;
        Vector xn = x - theta * ts, vn = v - theta * t;
        bool halt = rec.advance(concat(x, v), concat(xn, vn), false);
        x = std::move(xn);
        v = std::move(vn);
        if (halt) break;
    }
    auto out = wrap(rec.finish(x), std::move(duals), v);
    auto [kp, kd] = kkt_residuals(p, x, v, 1.0);
    out.kkt_primal = kp;
    out.kkt_dual = kd;
    return out;
}

// ---- ADMM ---------------------------------------------------------------------

AugmentedProx quadratic_augmented_prox(const FunctionDescriptor& f, const LinMap& L, double gamma) {
    Matrix Lm = L.to_matrix();
    const Index n = Lm.cols();
    Matrix M = Lm.transpose() * Lm;
    Vector lin = Vector::Zero(n);
    const auto& var = f.variant();
    auto l1 = std::get_if<L1Fn>(&var);
    if (l1 && l1->weight == 0.0) {
        // f = 0: plain least squares
    } else if (std::holds_alternative<SqNormHalfFn>(var)) {
        M += gamma * Matrix::Identity(n, n);
    } else if (auto qf = std::get_if<QuadraticFitFn>(&var)) {
        if (qf->H.cols() != n) throw DimensionError("quadratic_augmented_prox: H and L domains differ");
        M += gamma * (qf->H.transpose() * qf->H + qf->kappa * Matrix::Identity(n, n));
        lin = gamma * qf->H.transpose() * qf->y;
    } else if (Lm.rows() == n && (Lm - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() == 0.0) {
        return [f, gamma](double, const Vector& y) { return prox(f, gamma, y); };
    } else {
        throw std::invalid_argument("admm: no closed-form augmented prox for " + f.describe() +
                                    "; supply an oracle");
    }
    auto fac = std::make_shared<Eigen::LLT<Matrix>>(M);
    if (fac->info() != Eigen::Success) throw PreconditionError("ADMM", "L^* L plus the Hessian is not invertible");
    auto Lt = std::make_shared<Matrix>(Lm.transpose());
    return [fac, Lt, lin](double, const Vector& y) { return Vector(fac->solve(lin + *Lt * y)); };
}

IterTrace admm(const FunctionDescriptor& f, const FunctionDescriptor& g, const LinMap& L, const Vector& y0,
               const Vector& z0, const SplitOptions& opt, const StopRule& stop, AugmentedProx oracle) {
    require_dim(y0.size(), L.out_dim(), "admm");
    require_dim(z0.size(), L.out_dim(), "admm");
    if (!opt.gamma.constant()) throw std::invalid_argument("admm: gamma must be constant");
    const double gam = opt.gamma.at(0, 1.0, 1.0);
    if (!(gam > 0)) throw PreconditionError("ADMM", "gamma must be positive");
    {
        Matrix Lm = L.to_matrix();
        auto e = sym_eig(Lm.transpose() * Lm);
        if (!(e.values(0) > 1e-10 * std::max(1.0, e.values.maxCoeff())))
            throw PreconditionError("ADMM", "L^* L must be invertible");
    }
    if (!oracle) oracle = quadratic_augmented_prox(f, L, gam);

    Vector y = y0, z = z0;
    Vector x = oracle(gam, y - z);
    TraceRecorder rec(stop, concat(y0, z0), opt.objective);
    while (true) {
        x = oracle(gam, y - z);
        Vector d = L.apply(x);
        Vector yn = prox(g, gam, d + z);
        Vector zn = z + d - yn;
        if (rec.check(std::sqrt((d - yn).squaredNorm() + (yn - y).squaredNorm()), x)) break;
        bool halt = rec.advance(concat(y, z), concat(yn, zn));
        y = std::move(yn);
        z = std::move(zn);
        if (halt) break;
    }
    return rec.finish(x);
}

// ---- stochastic FB -----------------------------------------------------------

IterTrace stochastic_fb(const FunctionDescriptor& f, const GradientEstimator& u, double delta, const Vector& x0,
                        Rng& rng, const SplitOptions& opt, const StopRule& stop, bool variance_declared) {
    if (!(delta > 0)) throw std::invalid_argument("stochastic_fb: delta must be positive");
    if (!opt.gamma.constant()) throw std::invalid_argument("stochastic_fb: gamma must be constant");
    const double g = opt.gamma.at(0, 0.0, 2.0 / delta);
    if (!(g > 0 && g < 2.0 / delta)) {
        std::ostringstream os;
        os << "gamma = " << g << " outside (0, " << 2.0 / delta << ")";
        throw PreconditionError("stochastic forward-backward step", os.str());
    }
    auto lam = lambda_of(opt);
    // lambda_n in (0,1] with divergent sum: the 1/2-relaxation test covers divergence since lambda <= 1
    require_schedule(0.5, lam, "stochastic relaxation");

    TraceRecorder rec(stop, x0, opt.objective);
    Vector x = x0;
    for (std::size_t n = 0;; ++n) {
        double l = lam.at(n);
        if (outside(l, std::numeric_limits<double>::min(), 1.0))
            return stop_on_violation(rec, x, n, "stochastic relaxation", fmt_band("lambda", n, l, 0.0, 1.0));
        Vector un = u(x, n, rng);
        Vector px = prox(f, g, x - g * un);
        if (rec.check((px - x).norm(), x)) break;
        Vector xn = x + l * (px - x);
        bool halt = rec.advance(x, xn, false);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    t.seed = rng.seed();
    t.metadata["variance_conditions"] = variance_declared ? "declared" : "undeclared";
    if (!variance_declared)
        t.warnings.push_back({"variance-undeclared", "variance conditions were not declared; no convergence claim"});
    return t;
}

// ---- block-coordinate methods ------------------------------------------------

void BlockProblem::validate(bool smooth) const {
    if (primal_dims.empty() || f.size() != m()) throw std::invalid_argument("BlockProblem: one f_i per primal block");
    if (smooth ? g_smooth.size() != q() : g.size() != q())
        throw std::invalid_argument("BlockProblem: one g_k per dual block");
    if (L.size() != q()) throw DimensionError("BlockProblem: L needs one row per g_k");
    for (std::size_t k = 0; k < q(); ++k) {
        if (L[k].size() != m()) throw DimensionError("BlockProblem: L needs one column per f_i");
        for (std::size_t i = 0; i < m(); ++i)
            if (L[k][i] && (L[k][i]->in_dim() != primal_dims[i] || L[k][i]->out_dim() != dual_dims[k]))
                throw DimensionError("BlockProblem: L_ki shape mismatch");
    }
}

Vector BlockProblem::forward(const Vector& x) const {
    auto po = offsets_of(primal_dims), dof = offsets_of(dual_dims);
    Vector out = Vector::Zero(dof.back());
    for (std::size_t k = 0; k < q(); ++k)
        for (std::size_t i = 0; i < m(); ++i)
            if (L[k][i]) out.segment(dof[k], dual_dims[k]) += L[k][i]->apply(x.segment(po[i], primal_dims[i]));
    return out;
}

Vector BlockProblem::adjoint(const Vector& y) const {
    auto po = offsets_of(primal_dims), dof = offsets_of(dual_dims);
    Vector out = Vector::Zero(po.back());
    for (std::size_t k = 0; k < q(); ++k)
        for (std::size_t i = 0; i < m(); ++i)
            if (L[k][i])
                out.segment(po[i], primal_dims[i]) += L[k][i]->apply_adjoint(y.segment(dof[k], dual_dims[k]));
    return out;
}

double BlockProblem::objective(const Vector& x) const {
    auto po = offsets_of(primal_dims), dof = offsets_of(dual_dims);
    double s = 0.0;
    for (std::size_t i = 0; i < m(); ++i) s += value(f[i], x.segment(po[i], primal_dims[i]));
    Vector y = forward(x);
    for (std::size_t k = 0; k < q(); ++k) {
        Vector yk = y.segment(dof[k], dual_dims[k]);
        if (k < g.size()) s += value(g[k], yk);
        else if (k < g_smooth.size() && g_smooth[k].value) s += g_smooth[k].value(yk);
    }
    return s;
}

namespace {

void check_probs(const std::vector<double>& probs, std::size_t count) {
    if (probs.size() != count) throw std::invalid_argument("activation probabilities: one per block required");
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (!(probs[i] > 0 && probs[i] <= 1))
            throw PreconditionError("activation probabilities",
                                    "probability of block " + std::to_string(i) + " must lie in (0,1]");
}

TraceRecorder::Objective block_objective(const BlockProblem& p, const SplitOptions& opt) {
    if (opt.objective) return opt.objective;
    return [&p](const Vector& v) { return p.objective(v); };
}

// Draws a nonzero activation vector.
void draw(const std::vector<double>& probs, std::vector<char>& on, Rng& rng) {
    bool any = false;
    while (!any) {
        for (std::size_t i = 0; i < probs.size(); ++i) {
            on[i] = rng.bernoulli(probs[i]) ? 1 : 0;
            any = any || on[i];
        }
    }
}

}  // namespace

IterTrace block_coordinate_dr(const BlockProblem& p, const BlockDrState& init, const std::vector<double>& probs,
                              Rng& rng, const SplitOptions& opt, const StopRule& stop) {
    p.validate(false);
    require_eps(opt.eps);
    const std::size_t m = p.m(), q = p.q();
    auto po = offsets_of(p.primal_dims), dof = offsets_of(p.dual_dims);
    const Index N = po.back(), G = dof.back();
    require_dim(init.x.size(), N, "block_coordinate_dr");
    require_dim(init.z.size(), N, "block_coordinate_dr");
    require_dim(init.y.size(), G, "block_coordinate_dr");
    require_dim(init.w.size(), G, "block_coordinate_dr");
    check_probs(probs, m + q);
    if (!opt.gamma.constant()) throw std::invalid_argument("block_coordinate_dr: gamma must be constant");
    const double g = opt.gamma.at(0, 1.0, 1.0);
    if (!(g > 0)) throw PreconditionError("block-coordinate Douglas-Rachford step", "gamma must be positive");
    auto lam = lambda_of(opt);

    // proj_V(x, y) = (s, L s) with s = (I + L^* L)^{-1} (x + L^* y)
    Matrix Lm(G, N);
    for (Index j = 0; j < N; ++j) Lm.col(j) = p.forward(Vector::Unit(N, j));
    Eigen::LLT<Matrix> fac(Matrix::Identity(N, N) + Lm.transpose() * Lm);

    Vector x = init.x, z = init.z, y = init.y, w = init.w;
    auto state = [&] {
        Vector s(2 * N + 2 * G);
        s << x, z, y, w;
        return s;
    };
    std::vector<char> on(m + q);
    std::vector<Vector> dx(m), dy(q);
    TraceRecorder rec(stop, state(), block_objective(p, opt));
    for (std::size_t n = 0;; ++n) {
        double l = lam.at(n);
        if (outside(l, opt.eps, 2.0 - opt.eps)) {
            return stop_on_violation(rec, z, n, "block-coordinate relaxation band",
                                     fmt_band("lambda", n, l, opt.eps, 2.0 - opt.eps));
        }
        Vector qs = fac.solve(x + Lm.transpose() * y);
        Vector qy = Lm * qs;
        // full-activation step directions; their norm is the fixed-point residual
        parallel_for(m + q, [&](std::size_t j) {
            if (j < m) {
                Vector qi = qs.segment(po[j], p.primal_dims[j]);
                dx[j] = prox(p.f[j], g, 2.0 * qi - x.segment(po[j], p.primal_dims[j])) - qi;
            } else {
                std::size_t k = j - m;
                Vector qk = qy.segment(dof[k], p.dual_dims[k]);
                dy[k] = prox(p.g[k], g, 2.0 * qk - y.segment(dof[k], p.dual_dims[k])) - qk;
            }
        });
        double r2 = 0.0;
        for (const auto& d : dx) r2 += d.squaredNorm();
        for (const auto& d : dy) r2 += d.squaredNorm();
        if (rec.check(std::sqrt(r2), z)) break;
        Vector prev = state();
        draw(probs, on, rng);
        for (std::size_t i = 0; i < m; ++i) {
            if (!on[i]) continue;
            z.segment(po[i], p.primal_dims[i]) = qs.segment(po[i], p.primal_dims[i]);
            x.segment(po[i], p.primal_dims[i]) += l * dx[i];
        }
        for (std::size_t k = 0; k < q; ++k) {
            if (!on[m + k]) continue;
            w.segment(dof[k], p.dual_dims[k]) = qy.segment(dof[k], p.dual_dims[k]);
            y.segment(dof[k], p.dual_dims[k]) += l * dy[k];
        }
        if (rec.advance(prev, state(), false)) break;
    }
    IterTrace t = rec.finish(z);
    t.seed = rng.seed();
    return t;
}

double block_gradient_lipschitz(const BlockProblem& p) {
    auto po = offsets_of(p.primal_dims);
    const Index N = po.back();
    double s = 0.0;
    for (std::size_t k = 0; k < p.q(); ++k) {
        Matrix row(p.dual_dims[k], N);
        row.setZero();
        for (std::size_t i = 0; i < p.m(); ++i)
            if (p.L[k][i]) row.middleCols(po[i], p.primal_dims[i]) = p.L[k][i]->to_matrix();
        double nl = spectral_norm(row);
        s += p.g_smooth[k].lipschitz * nl * nl;
    }
    return s;
}

IterTrace block_coordinate_fb(const BlockProblem& p, const Vector& x0, const std::vector<double>& gamma,
                              const std::vector<double>& probs, Rng& rng, const SplitOptions& opt,
                              const StopRule& stop) {
    p.validate(true);
    require_eps(opt.eps);
    const std::size_t m = p.m(), q = p.q();
    auto po = offsets_of(p.primal_dims), dof = offsets_of(p.dual_dims);
    require_dim(x0.size(), po.back(), "block_coordinate_fb");
    check_probs(probs, m);
    const double delta = block_gradient_lipschitz(p);
    const double ghi = delta > 0 ? (2.0 - opt.eps) / delta : kInf;
    std::vector<double> gam = gamma.empty() ? std::vector<double>(m, delta > 0 ? 1.0 / delta : 1.0) : gamma;
    if (gam.size() != m) throw std::invalid_argument("block_coordinate_fb: one step per primal block required");
    for (std::size_t i = 0; i < m; ++i)
        if (!(gam[i] > 0 && gam[i] <= ghi))
            throw PreconditionError("block-coordinate step band", fmt_band("gamma", i, gam[i], 0.0, ghi));
    auto lam = lambda_of(opt);

    Vector x = x0;
    std::vector<char> on(m);
    std::vector<Vector> d(m);
    TraceRecorder rec(stop, x0, block_objective(p, opt));
    for (std::size_t n = 0;; ++n) {
        double l = lam.at(n);
        if (outside(l, opt.eps, 1.0))
            return stop_on_violation(rec, x, n, "block-coordinate relaxation band", fmt_band("lambda", n, l, opt.eps, 1.0));
        Vector y = p.forward(x);
        Vector gy(dof.back());
        for (std::size_t k = 0; k < q; ++k)
            gy.segment(dof[k], p.dual_dims[k]) = p.g_smooth[k].grad(y.segment(dof[k], p.dual_dims[k]));
        Vector grad = p.adjoint(gy);
        parallel_for(m, [&](std::size_t i) {
            Vector xi = x.segment(po[i], p.primal_dims[i]);
            d[i] = prox(p.f[i], gam[i], xi - gam[i] * grad.segment(po[i], p.primal_dims[i])) - xi;
        });
        double r2 = 0.0;
        for (const auto& v : d) r2 += v.squaredNorm();
        if (rec.check(std::sqrt(r2), x)) break;
        draw(probs, on, rng);
        Vector xn = x;
        for (std::size_t i = 0; i < m; ++i)
            if (on[i]) xn.segment(po[i], p.primal_dims[i]) += l * d[i];
        bool halt = rec.advance(x, xn, false);
        x = std::move(xn);
        if (halt) break;
    }
    IterTrace t = rec.finish(x);
    t.seed = rng.seed();
    t.metadata["delta"] = std::to_string(delta);
    return t;
}

IterTrace block_update_fb(const FunctionDescriptor& f0, const std::vector<SmoothTerm>& fs,
                          const std::vector<double>& weights, BlockSchedule schedule, double gamma, const Vector& x0,
                          const std::vector<Vector>& t_init, const StopRule& stop) {
    if (fs.empty()) throw std::invalid_argument("block_update_fb: no smooth terms");
    double dmax = 0.0;
    for (const auto& f : fs) {
        if (!(f.lipschitz > 0)) throw std::invalid_argument("block_update_fb: Lipschitz constants must be positive");
        dmax = std::max(dmax, f.lipschitz);
    }
    if (!(gamma > 0 && gamma < 2.0 / dmax)) {
        std::ostringstream os;
        os << "gamma = " << gamma << " outside (0, " << 2.0 / dmax << ")";
        throw PreconditionError("block-update step", os.str());
    }
    const Index n = x0.size();
    std::vector<OperatorRef> Ts;
    for (const auto& f : fs) {
        auto B = MonotoneOp::single_valued(n, f.grad, 1.0 / f.lipschitz, f.lipschitz, "gradient");
        Ts.push_back(forward_step(B, gamma));
    }
    return block_update_iterate(prox_op(f0, gamma, n), Ts, weights, std::move(schedule), x0, t_init, stop);
}

void write_dual_csv(const PrimalDualTrace& t, std::ostream& os) {
    os << "iter";
    Index d = t.v.size();
    for (Index j = 0; j < d; ++j) os << ",v" << j;
    os << '\n';
    char buf[64];
    for (std::size_t s = 0; s < t.dual_snapshots.size() && s < t.primal.snapshot_iters.size(); ++s) {
        os << t.primal.snapshot_iters[s];
        for (Index j = 0; j < t.dual_snapshots[s].size(); ++j) {
            auto res = std::to_chars(buf, buf + sizeof buf, t.dual_snapshots[s](j));
            os << ',';
            os.write(buf, res.ptr - buf);
        }
        os << '\n';
    }
}

}  // namespace splitfix
