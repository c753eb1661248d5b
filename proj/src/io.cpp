#include "splitfix/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitfix/applications.hpp"
#include "splitfix/errors.hpp"
#include "splitfix/splitting.hpp"

namespace splitfix {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& what) { throw SchemaError(field + ": " + what); }

const Json& need(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) bad(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) bad(path.empty() ? key : path + "." + key, "missing");
    return *it;
}

std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double num(const Json& j, const std::string& field) {
    if (!j.is_number()) bad(field, "expected a number");
    double v = j.get<double>();
    if (!std::isfinite(v)) bad(field, "not finite");
    return v;
}

double num_or(const Json& j, const std::string& key, double dflt, const std::string& path = "") {
    auto it = j.find(key);
    return it == j.end() ? dflt : num(*it, sub(path, key));
}

std::string str_or(const Json& j, const std::string& key, const std::string& dflt) {
    auto it = j.find(key);
    if (it == j.end()) return dflt;
    if (!it->is_string()) bad(key, "expected a string");
    return it->get<std::string>();
}

Vector vec_of(const Json& j, const std::string& field) {
    if (!j.is_array()) bad(field, "expected an array of numbers");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = num(j[i], field + "[" + std::to_string(i) + "]");
    return v;
}

Matrix mat_of(const Json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) bad(field, "expected a non-empty array of rows");
    if (j[0].is_number()) {  // a bare row is a 1 x n matrix
        Vector r = vec_of(j, field);
        return r.transpose();
    }
    const Index rows = static_cast<Index>(j.size());
    Index cols = -1;
    Matrix m;
    for (Index i = 0; i < rows; ++i) {
        Vector r = vec_of(j[static_cast<std::size_t>(i)], field + "[" + std::to_string(i) + "]");
        if (cols < 0) {
            cols = r.size();
            m.resize(rows, cols);
        } else if (r.size() != cols) {
            bad(field, "ragged rows");
        }
        m.row(i) = r.transpose();
    }
    return m;
}

SetDescriptor set_of(const Json& j, const std::string& path) {
    std::string type = need(j, "type", path).is_string() ? j["type"].get<std::string>() : "";
    if (type == "box") return SetDescriptor::box(vec_of(need(j, "lo", path), sub(path, "lo")), vec_of(need(j, "hi", path), sub(path, "hi")));
    if (type == "interval") return SetDescriptor::interval(num(need(j, "lo", path), sub(path, "lo")), num(need(j, "hi", path), sub(path, "hi")));
    if (type == "ball") return SetDescriptor::ball(vec_of(need(j, "center", path), sub(path, "center")), num(need(j, "radius", path), sub(path, "radius")));
    if (type == "halfspace") return SetDescriptor::halfspace(vec_of(need(j, "a", path), sub(path, "a")), num(need(j, "b", path), sub(path, "b")));
    if (type == "hyperplane") return SetDescriptor::hyperplane(vec_of(need(j, "a", path), sub(path, "a")), num(need(j, "b", path), sub(path, "b")));
    if (type == "point") return SetDescriptor::point(vec_of(need(j, "c", path), sub(path, "c")));
    if (type == "whole") return SetDescriptor::whole_space(static_cast<Index>(num(need(j, "dim", path), sub(path, "dim"))));
    bad(sub(path, "type"), "unknown set type '" + type + "' (box, interval, ball, halfspace, hyperplane, point, whole)");
}

FunctionDescriptor fn_of(const Json& j, const std::string& path) {
    std::string type = need(j, "type", path).is_string() ? j["type"].get<std::string>() : "";
    if (type == "l1") return FunctionDescriptor::l1(num_or(j, "weight", 1.0, path));
    if (type == "zero") return FunctionDescriptor::zero();
    if (type == "sq_norm_half") return FunctionDescriptor::sq_norm_half();
    if (type == "sq_distance_half") return FunctionDescriptor::sq_distance_half(vec_of(need(j, "o", path), sub(path, "o")));
    if (type == "indicator") return FunctionDescriptor::indicator(set_of(need(j, "set", path), sub(path, "set")));
    bad(sub(path, "type"), "unknown function type '" + type + "' (l1, zero, sq_norm_half, sq_distance_half, indicator)");
}

template <class T, class F>
std::vector<T> list_of(const Json& j, const std::string& field, F&& each) {
    if (!j.is_array() || j.empty()) bad(field, "expected a non-empty array");
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(each(j[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<SetDescriptor> sets_of(const Json& j, const std::string& field) {
    return list_of<SetDescriptor>(j, field, set_of);
}

Vector start_or(const Json& p, const std::string& key, Index n) {
    auto it = p.find(key);
    if (it == p.end()) return Vector::Zero(n);
    Vector v = vec_of(*it, key);
    if (v.size() != n) bad(key, "expected length " + std::to_string(n));
    return v;
}

StopRule stop_of(const Json& p, const SolveOverrides& ov) {
    StopRule s;
    auto it = p.find("stop");
    if (it != p.end()) {
        s.residual_tol = num_or(*it, "tol", s.residual_tol, "stop");
        double mi = num_or(*it, "max_iter", static_cast<double>(s.max_iter), "stop");
        if (mi < 1) bad("stop.max_iter", "must be >= 1");
        s.max_iter = static_cast<std::size_t>(mi);
    }
    if (ov.tol) s.residual_tol = *ov.tol;
    if (ov.max_iter) s.max_iter = *ov.max_iter;
    s.validate();
    return s;
}

struct Ctx {
    const Json& p;
    const SolveOverrides& ov;
    StopRule stop;
    std::vector<std::string> unused;  // overrides the problem does not consume

    double gamma(double dflt) const { return ov.gamma ? *ov.gamma : num_or(p, "gamma", dflt); }
    std::optional<double> gamma_opt() const {
        if (ov.gamma) return ov.gamma;
        if (p.contains("gamma")) return num(p["gamma"], "gamma");
        return std::nullopt;
    }
    double lambda(double dflt) const { return ov.lambda ? *ov.lambda : num_or(p, "lambda", dflt); }
    std::optional<RelaxationSchedule> lambda_opt() const {
        if (ov.lambda) return RelaxationSchedule::constant(*ov.lambda);
        if (p.contains("lambda")) return RelaxationSchedule::constant(num(p["lambda"], "lambda"));
        return std::nullopt;
    }
    void no_gamma() {
        if (ov.gamma) unused.push_back("gamma");
    }
    void no_lambda() {
        if (ov.lambda) unused.push_back("lambda");
    }
};

SolveOutcome solve_feasibility(Ctx& c) {
    FeasibilitySpec spec;
    spec.sets = sets_of(need(c.p, "sets", ""), "sets");
    if (c.p.contains("weights")) {
        Vector w = vec_of(c.p["weights"], "weights");
        spec.weights.assign(w.data(), w.data() + w.size());
    }
    std::string mode = str_or(c.p, "mode", "sequential");
    PocsMode pm;
    if (mode == "sequential") pm = PocsMode::Sequential;
    else if (mode == "barycentric") pm = PocsMode::Barycentric;
    else bad("mode", "expected sequential or barycentric");
    c.no_gamma();
    c.no_lambda();
    auto r = pocs(spec, start_or(c.p, "x0", spec.sets[0].dim()), pm, c.stop);
    SolveOutcome out{"feasibility", r.trace, Json::object(), 0};
    out.solution["x"] = to_json(r.trace.x);
    out.solution["max_distance"] = r.max_distance;
    if (r.cycle) {
        Json lim = Json::array();
        for (auto& v : r.cycle->limits) lim.push_back(to_json(v));
        out.solution["cycle"] = lim;
        out.solution["cycle_residuals"] = r.cycle->residuals;
    }
    return out;
}

SolveOutcome solve_lasso(Ctx& c) {
    Matrix H = mat_of(need(c.p, "H", ""), "H");
    Vector o = vec_of(need(c.p, "o", ""), "o");
    double alpha = num(need(c.p, "alpha", ""), "alpha");
    if (o.size() != H.rows()) bad("o", "length differs from the rows of H");
    if (alpha < 0) bad("alpha", "must be >= 0");
    const Index n = H.cols();
    auto l1 = FunctionDescriptor::l1(alpha);
    auto fit = FunctionDescriptor::quadratic_fit(H, o);
    SplitOptions so;
    if (auto g = c.gamma_opt()) so.gamma = *g;
    so.lambda = c.lambda_opt();
    so.objective = [&](const Vector& x) { return 0.5 * (H * x - o).squaredNorm() + alpha * x.lpNorm<1>(); };
    std::string method = str_or(c.p, "method", "fb");
    Vector x0 = start_or(c.p, "x0", n);
    IterTrace t;
    if (method == "fb") {
        t = forward_backward({MonotoneOp::subdifferential(l1, n), MonotoneOp::gradient_of(fit, n), std::nullopt}, x0, so,
                             c.stop);
    } else if (method == "dr") {
        t = douglas_rachford({MonotoneOp::subdifferential(l1, n), MonotoneOp::subdifferential(fit, n), std::nullopt}, x0,
                             so, c.stop);
    } else if (method == "fbf") {
        t = tseng_fbf({MonotoneOp::subdifferential(l1, n), MonotoneOp::gradient_of(fit, n), std::nullopt}, x0, so, c.stop);
    } else {
        bad("method", "expected fb, dr or fbf");
    }
    SolveOutcome out{"lasso", t, Json::object(), 0};
    out.solution["x"] = to_json(t.x);
    out.solution["objective"] = so.objective(t.x);
    return out;
}

SolveOutcome solve_logistic(Ctx& c) {
    Matrix A = mat_of(need(c.p, "A", ""), "A");
    Vector eta = vec_of(need(c.p, "eta", ""), "eta");
    double alpha = num(need(c.p, "alpha", ""), "alpha");
    if (eta.size() != A.rows()) bad("eta", "length differs from the rows of A");
    RegressionOptions o;
    o.loss = parse_loss(str_or(c.p, "loss", "logistic"));
    std::string backend = str_or(c.p, "backend", "block");
    if (backend == "block") o.backend = Backend::BlockUpdate;
    else if (backend == "fb") o.backend = Backend::ForwardBackward;
    else bad("backend", "expected block or fb");
    o.gamma = c.gamma_opt();
    o.lambda = c.lambda_opt();
    if (o.backend == Backend::BlockUpdate) c.no_lambda();
    auto t = lasso_logistic(A, eta, alpha, start_or(c.p, "x0", A.cols()), o, c.stop);
    SolveOutcome out{"logistic", t, Json::object(), 0};
    out.solution["x"] = to_json(t.x);
    out.solution["objective"] = regression_objective(A, eta, alpha, o.loss, t.x);
    return out;
}

SolveOutcome solve_glasso(Ctx& c) {
    Matrix O = mat_of(need(c.p, "O", ""), "O");
    if (O.rows() != O.cols()) bad("O", "must be square");
    double chi = num(need(c.p, "chi", ""), "chi");
    Matrix Y0 = c.p.contains("Y0") ? mat_of(c.p["Y0"], "Y0") : Matrix::Zero(O.rows(), O.cols());
    auto t = graphical_lasso(O, chi, c.gamma(1.0), RelaxationSchedule::constant(c.lambda(1.0)), Y0, c.stop);
    SolveOutcome out{"glasso", t, Json::object(), 0};
    Matrix X = unflatten_rowmajor(t.x, O.rows(), O.cols());
    out.solution["x"] = to_json(t.x);
    out.solution["X"] = to_json(X);
    out.solution["objective"] = glasso_objective(O, chi, X);
    return out;
}

SolveOutcome solve_rpca(Ctx& c) {
    Matrix O = mat_of(need(c.p, "O", ""), "O");
    double chi = num_or(c.p, "chi", 1.0 / std::sqrt(static_cast<double>(std::max(O.rows(), O.cols()))));
    auto r = robust_pca(O, chi, c.gamma(1.0), RelaxationSchedule::constant(c.lambda(1.0)), c.stop);
    SolveOutcome out{"rpca", r.trace, Json::object(), 0};
    out.solution["x"] = to_json(r.trace.x);
    out.solution["sparse"] = to_json(r.X);
    out.solution["low_rank"] = to_json(r.Y);
    out.solution["objective"] = rpca_objective(chi, r.X, r.Y);
    return out;
}

SolveOutcome solve_completion(Ctx& c) {
    Matrix O = mat_of(need(c.p, "O", ""), "O");
    Matrix mask = mat_of(need(c.p, "mask", ""), "mask");
    if (mask.rows() != O.rows() || mask.cols() != O.cols()) bad("mask", "shape differs from O");
    double chi = num(need(c.p, "chi", ""), "chi");
    StepSize g;
    if (auto v = c.gamma_opt()) g = *v;
    auto t = matrix_completion(O, mask, chi, g, c.lambda_opt(), Matrix::Zero(O.rows(), O.cols()), c.stop);
    SolveOutcome out{"completion", t, Json::object(), 0};
    Matrix X = unflatten_rowmajor(t.x, O.rows(), O.cols());
    out.solution["x"] = to_json(t.x);
    out.solution["X"] = to_json(X);
    out.solution["objective"] = completion_objective(O, mask, chi, X);
    return out;
}

SolveOutcome solve_cycles(Ctx& c) {
    c.no_gamma();
    c.no_lambda();
    CycleResult r;
    if (c.p.contains("sets")) {
        auto sets = sets_of(c.p["sets"], "sets");
        r = projection_cycles(sets, start_or(c.p, "x0", sets[0].dim()), c.stop);
    } else if (c.p.contains("anchors")) {
        auto fs = list_of<FunctionDescriptor>(c.p["anchors"], "anchors", [](const Json& a, const std::string& f) {
            return FunctionDescriptor::sq_distance_half(vec_of(a, f));
        });
        r = proximal_cycles(fs, start_or(c.p, "x0", static_cast<Index>(c.p["anchors"][0].size())), c.stop);
    } else {
        bad("sets", "missing (or give anchors for a proximal cycle)");
    }
    SolveOutcome out{"cycles", r.trace, Json::object(), 0};
    out.solution["x"] = to_json(r.trace.x);
    Json lim = Json::array();
    for (auto& v : r.limits) lim.push_back(to_json(v));
    out.solution["cycle"] = lim;
    out.solution["cycle_residuals"] = r.residuals;
    return out;
}

SolveOutcome solve_nash(Ctx& c) {
    std::string kind = str_or(c.p, "game", "");
    GameSpec game;
    IterTrace t;
    if (kind == "bilinear") {
        Matrix M = mat_of(need(c.p, "M", ""), "M");
        auto C1 = c.p.contains("C1") ? set_of(c.p["C1"], "C1") : SetDescriptor::whole_space(M.cols());
        auto C2 = c.p.contains("C2") ? set_of(c.p["C2"], "C2") : SetDescriptor::whole_space(M.rows());
        game = bilinear_game(num_or(c.p, "c1", 0.0), num_or(c.p, "c2", 0.0), M, C1, C2);
        StepSize g;
        if (auto v = c.gamma_opt()) g = *v;
        c.no_lambda();
        Index n = game.total_dim();
        t = nash_fbf(game, g, num_or(c.p, "eps", 0.05), start_or(c.p, "x0", n), Vector::Zero(n), c.stop).primal;
    } else if (kind == "chain") {
        auto L = list_of<Matrix>(need(c.p, "L", ""), "L", mat_of);
        auto o = list_of<Vector>(need(c.p, "o", ""), "o", vec_of);
        auto psi = list_of<FunctionDescriptor>(need(c.p, "psi", ""), "psi", fn_of);
        std::vector<SetDescriptor> C;
        if (c.p.contains("C")) C = sets_of(c.p["C"], "C");
        else for (auto& Li : L) C.push_back(SetDescriptor::whole_space(Li.cols()));
        game = chain_game(L, o, psi, C);
        double g = c.gamma(*game.cocoercive);
        t = nash_dy(game, g, RelaxationSchedule::constant(c.lambda(1.0)), start_or(c.p, "x0", game.total_dim()), c.stop);
    } else {
        bad("game", "expected bilinear or chain");
    }
    SolveOutcome out{"nash", t, Json::object(), 0};
    out.solution["x"] = to_json(t.x);
    try {
        out.solution["best_response_residual"] = best_response_residual(game, t.x);
    } catch (const std::invalid_argument&) {
        out.solution["best_response_residual"] = nullptr;
    }
    return out;
}

SolveOutcome solve_pnp(Ctx& c) {
    FunctionDescriptor f = fn_of(need(c.p, "f", ""), "f");
    const Json& d = need(c.p, "denoiser", "");
    const Index n = static_cast<Index>(num(need(c.p, "dim", ""), "dim"));
    std::string type = str_or(d, "type", "");
    double gamma = c.gamma(1.0);
    std::optional<OperatorRef> Q;
    if (type == "prox") {
        Q = prox_op(fn_of(need(d, "function", "denoiser"), "denoiser.function"), num_or(d, "scale", 1.0, "denoiser"), n);
    } else if (type == "projection") {
        Q = projection_op(set_of(need(d, "set", "denoiser"), "denoiser.set"));
    } else if (type == "smoother") {
        // x/2 + mean(x)/2: a symmetric averaging filter with eigenvalues in [1/2, 1]
        Q = OperatorRef(n, [](const Vector& x) -> Vector { return 0.5 * x + Vector::Constant(x.size(), 0.5 * x.mean()); },
                        RegularityTag::firmly_nonexpansive(), "smoother");
    } else {
        bad("denoiser.type", "expected prox, projection or smoother");
    }
    PnpModel model{*Q, f};
    std::string method = str_or(c.p, "method", "fb");
    SolveOutcome out{"pnp", {}, Json::object(), 0};
    if (method == "fb") {
        out.trace = pnp_fb(model, gamma, RelaxationSchedule::constant(c.lambda(1.0)), start_or(c.p, "x0", n), c.stop);
    } else if (method == "dr") {
        out.trace = pnp_dr(model, gamma, RelaxationSchedule::constant(c.lambda(1.0)), start_or(c.p, "x0", n), c.stop);
    } else if (method == "admm") {
        c.no_lambda();
        auto r = pnp_admm(model, gamma, start_or(c.p, "x0", n), Vector::Zero(n), c.stop);
        out.trace = r.trace;
    } else {
        bad("method", "expected fb, dr or admm");
    }
    out.solution["x"] = to_json(out.trace.x);
    return out;
}

SolveOutcome solve_mismatch(Ctx& c) {
    MismatchSpec spec{LinMap::from_matrix(mat_of(need(c.p, "H", ""), "H")),
                      LinMap::from_matrix(mat_of(need(c.p, "K", ""), "K")), num_or(c.p, "kappa", 0.0),
                      vec_of(need(c.p, "y", ""), "y"),
                      c.p.contains("f") ? fn_of(c.p["f"], "f") : FunctionDescriptor::zero()};
    StepSize g;
    if (auto v = c.gamma_opt()) g = *v;
    auto r = mismatched_fb(spec, g, c.lambda_opt(), start_or(c.p, "x0", spec.H.in_dim()), c.stop);
    SolveOutcome out{"mismatch", r.trace, Json::object(), 0};
    out.solution["x"] = to_json(r.x_tilde);
    out.solution["x_hat"] = to_json(r.bias.x_hat);
    out.solution["difference"] = r.bias.difference;
    out.solution["predicted_difference"] = to_json(r.bias.predicted_difference);
    out.solution["exact_relation_applies"] = r.bias.exact_relation_applies;
    if (r.bias.exact_relation_applies)
        out.solution["exact_relation_residual"] = ((r.x_tilde - r.bias.x_hat) - r.bias.predicted_difference).norm();
    out.solution["residual_term"] = r.bias.residual_term;
    out.solution["chi_full"] = r.bias.chi_full;
    out.solution["chi_half"] = r.bias.chi_half;
    out.solution["bound_full"] = r.bias.bound_full;
    out.solution["bound_half"] = r.bias.bound_half;
    return out;
}

SolveOutcome solve_nonlinear(Ctx& c) {
    c.no_gamma();
    c.no_lambda();
    ObservationSpec spec;
    spec.dim = static_cast<Index>(num(need(c.p, "dim", ""), "dim"));
    spec.obs = list_of<Observation>(need(c.p, "observations", ""), "observations", [&](const Json& o, const std::string& f) {
        std::string type = str_or(o, "type", "");
        Vector r = vec_of(need(o, "r", f), sub(f, "r"));
        Observation ob;
        ob.r = r;
        ob.name = type;
        if (type == "soft_threshold") {
            double t = num(need(o, "threshold", f), sub(f, "threshold"));
            ob.R = [t](const Vector& x) { return soft_threshold(x, t); };
        } else if (type == "clip") {
            auto C = set_of(need(o, "set", f), sub(f, "set"));
            ob.R = [C](const Vector& x) { return project(C, x); };
        } else if (type == "identity") {
            ob.R = [](const Vector& x) { return x; };
        } else if (type == "linear") {
            Matrix R = mat_of(need(o, "R", f), sub(f, "R"));
            double s = spectral_norm(R);
            if (s == 0) bad(sub(f, "R"), "zero map");
            Matrix S = R.transpose() / (s * s);
            ob.R = [R](const Vector& x) -> Vector { return R * x; };
            ob.S = [S](const Vector& u) -> Vector { return S * u; };
        } else {
            bad(sub(f, "type"), "expected soft_threshold, clip, identity or linear");
        }
        return ob;
    });
    auto t = nonlinear_observation_solve(spec, start_or(c.p, "x0", spec.dim), c.stop);
    SolveOutcome out{"nonlinear_obs", t, Json::object(), 0};
    out.solution["x"] = to_json(t.x);
    out.solution["observation_residual"] = std::stod(t.metadata.at("observation_residual"));
    return out;
}

}  // namespace

Json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        // byte offset -> line/column
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << source << ":" << line << ":" << col << ": malformed JSON";
        throw SchemaError(os.str());
    }
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), path);
}

Vector json_vector(const Json& j, const std::string& field) { return vec_of(need(j, field, ""), field); }
Matrix json_matrix(const Json& j, const std::string& field) { return mat_of(need(j, field, ""), field); }
SetDescriptor json_set(const Json& j, const std::string& field) { return set_of(need(j, field, ""), field); }
FunctionDescriptor json_function(const Json& j, const std::string& field) { return fn_of(need(j, field, ""), field); }

Json to_json(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Json to_json(const Matrix& m) {
    Json a = Json::array();
    for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
    return a;
}

Json SolveOutcome::summary() const {
    Json s;
    s["problem"] = problem;
    s["status"] = to_string(trace.status);
    s["iterations"] = trace.iterations;
    s["final_residual"] = trace.final_residual();
    s["seed"] = seed;
    s["diverging"] = trace.diverging;
    s["stagnated"] = trace.stagnated;
    Json w = Json::array();
    for (const auto& x : trace.warnings) w.push_back({{"code", x.code}, {"message", x.message}});
    s["warnings"] = w;
    Json md = Json::object();
    for (const auto& [k, v] : trace.metadata) md[k] = v;
    s["metadata"] = md;
    return s;
}

SolveOutcome solve_problem(const Json& p, const SolveOverrides& ov) {
    if (!p.is_object()) throw SchemaError("problem file: expected a JSON object");
    auto it = p.find("problem");
    if (it == p.end() || !it->is_string()) throw SchemaError("problem: missing discriminator");
    const std::string kind = it->get<std::string>();
    Ctx c{p, ov, stop_of(p, ov), {}};

    SolveOutcome out;
    if (kind == "feasibility") out = solve_feasibility(c);
    else if (kind == "lasso") out = solve_lasso(c);
    else if (kind == "logistic") out = solve_logistic(c);
    else if (kind == "glasso") out = solve_glasso(c);
    else if (kind == "rpca") out = solve_rpca(c);
    else if (kind == "completion") out = solve_completion(c);
    else if (kind == "cycles") out = solve_cycles(c);
    else if (kind == "nash") out = solve_nash(c);
    else if (kind == "pnp") out = solve_pnp(c);
    else if (kind == "mismatch") out = solve_mismatch(c);
    else if (kind == "nonlinear_obs") out = solve_nonlinear(c);
    else
        throw SchemaError("problem: unknown discriminator '" + kind +
                          "' (feasibility, lasso, logistic, glasso, rpca, completion, cycles, nash, pnp, mismatch, "
                          "nonlinear_obs)");

    out.seed = ov.seed ? *ov.seed : static_cast<std::uint64_t>(num_or(p, "seed", 0.0));
    for (const auto& u : c.unused)
        out.trace.warnings.push_back({"override-ignored", "--" + u + " is not a parameter of problem '" + kind + "'"});
    return out;
}

FeedforwardNet json_net(const Json& j) {
    FeedforwardNet net;
    net.layers = list_of<Layer>(need(j, "layers", ""), "layers", [](const Json& l, const std::string& f) {
        Layer L;
        L.W = mat_of(need(l, "W", f), sub(f, "W"));
        L.b = l.contains("b") ? vec_of(l["b"], sub(f, "b")) : Vector::Zero(L.W.rows());
        try {
            L.act = Activation::parse(str_or(l, "activation", "identity"));
        } catch (const std::invalid_argument& e) {
            bad(sub(f, "activation"), e.what());
        }
        return L;
    });
    try {
        net.validate();
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("layers: ") + e.what());
    }
    return net;
}

Json certificate_json(const FeedforwardNet& net, const Certificate& c) {
    Json j;
    j["layers"] = net.depth();
    j["theta_m"] = c.theta_m;
    j["lipschitz_bound"] = c.lipschitz_bound;
    j["lower_bound"] = c.lower_bound;
    j["upper_bound"] = c.upper_bound;
    j["sandwich_holds"] = c.sandwich_holds;
    j["nonnegative_bound"] = c.nonnegative_bound ? Json(*c.nonnegative_bound) : Json(nullptr);
    j["averaged_alpha"] = c.averaged_alpha ? Json(*c.averaged_alpha) : Json(nullptr);
    return j;
}

void write_artifacts(const SolveOutcome& out, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(fs::path(dir) / name, std::ios::binary);
        if (!f) throw std::runtime_error(std::string("cannot write ") + (fs::path(dir) / name).string());
        return f;
    };
    {
        auto f = open("solution.json");
        Json s = out.solution;
        s["problem"] = out.problem;
        f << s.dump(2) << '\n';
    }
    {
        auto f = open("trace.csv");
        write_trace_csv(out.trace, f);
    }
    {
        auto f = open("summary.json");
        f << out.summary().dump(2) << '\n';
    }
}

}  // namespace splitfix
