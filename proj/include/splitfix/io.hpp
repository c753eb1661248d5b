#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "splitfix/drivers.hpp"
#include "splitfix/netanalysis.hpp"
#include "splitfix/operators.hpp"

namespace splitfix {

using Json = nlohmann::ordered_json;

// Malformed input: bad JSON, missing or mistyped fields, unknown discriminators.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Json parse_json_text(const std::string& text, const std::string& source = "<input>");
Json load_json_file(const std::string& path);

Vector json_vector(const Json& j, const std::string& field);
Matrix json_matrix(const Json& j, const std::string& field);  // array of rows
SetDescriptor json_set(const Json& j, const std::string& field);
FunctionDescriptor json_function(const Json& j, const std::string& field);
Json to_json(const Vector& v);
Json to_json(const Matrix& m);

struct SolveOverrides {
    std::optional<double> tol;
    std::optional<std::size_t> max_iter;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<double> lambda;
};

struct SolveOutcome {
    std::string problem;
    IterTrace trace;
    Json solution;  // problem-specific payload, always with "x"
    std::uint64_t seed = 0;

    Json summary() const;  // status, iterations, final residual, seed, warnings
};

// Problem file with a "problem" discriminator: feasibility | lasso | logistic | glasso | rpca |
// completion | cycles | nash | pnp | mismatch | nonlinear_obs.
SolveOutcome solve_problem(const Json& problem, const SolveOverrides& ov = {});

FeedforwardNet json_net(const Json& j);
Json certificate_json(const FeedforwardNet& net, const Certificate& c);

// Writes solution.json, trace.csv and summary.json under dir (created if missing).
void write_artifacts(const SolveOutcome& out, const std::string& dir);

}  // namespace splitfix
