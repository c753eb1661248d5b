#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace splitfix {

class RelaxationSchedule {
public:
    enum class Kind { Constant, Explicit, SqrtBand, Function };

    static RelaxationSchedule constant(double lambda);
    // Values past the end of the list repeat the last entry.
    static RelaxationSchedule explicit_list(std::vector<double> values);
    // lambda_n = eps / sqrt(n+1): a vanishing relaxation inside the band.
    static RelaxationSchedule sqrt_band(double eps);
    // lambda_n = 1/alpha - eps / sqrt(n+1): over-relaxation approaching 1/alpha.
    static RelaxationSchedule sqrt_band_upper(double eps, double alpha);
    static RelaxationSchedule function(std::function<double(std::size_t)> fn, std::string name = "function");

    double at(std::size_t n) const;
    Kind kind() const { return kind_; }
    double parameter() const { return param_; }
    std::string describe() const;

private:
    Kind kind_ = Kind::Constant;
    double param_ = 1.0;
    double alpha_ = 1.0;
    bool upper_ = false;
    std::vector<double> values_;
    std::function<double(std::size_t)> fn_;
    std::string name_;
};

struct ScheduleVerdict {
    bool valid = false;
    std::string reason;
};

// lambda_n in (0, 1/alpha) and sum lambda_n (1 - alpha lambda_n) divergent. Constant and
// SqrtBand schedules are decided exactly; Explicit and Function schedules are checked over
// `horizon` terms and accepted when the partial sum reaches horizon^0.4.
ScheduleVerdict validate_relaxation_schedule(double alpha, const RelaxationSchedule& schedule,
                                             std::size_t horizon = 10000);

}  // namespace splitfix
