#include "splitfix/relaxation.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace splitfix {

RelaxationSchedule RelaxationSchedule::constant(double lambda) {
    RelaxationSchedule s;
    s.kind_ = Kind::Constant;
    s.param_ = lambda;
    return s;
}

RelaxationSchedule RelaxationSchedule::explicit_list(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("explicit relaxation schedule must be nonempty");
    RelaxationSchedule s;
    s.kind_ = Kind::Explicit;
    s.values_ = std::move(values);
    return s;
}

RelaxationSchedule RelaxationSchedule::sqrt_band(double eps) {
    if (!(eps > 0 && eps < 1)) throw std::invalid_argument("sqrt band: eps must lie in (0,1)");
    RelaxationSchedule s;
    s.kind_ = Kind::SqrtBand;
    s.param_ = eps;
    return s;
}

RelaxationSchedule RelaxationSchedule::sqrt_band_upper(double eps, double alpha) {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("sqrt band: alpha must lie in (0,1]");
    if (!(eps > 0 && eps < 1)) throw std::invalid_argument("sqrt band: eps must lie in (0,1)");
    RelaxationSchedule s;
    s.kind_ = Kind::SqrtBand;
    s.param_ = eps;
    s.alpha_ = alpha;
    s.upper_ = true;
    return s;
}

RelaxationSchedule RelaxationSchedule::function(std::function<double(std::size_t)> fn, std::string name) {
    if (!fn) throw std::invalid_argument("function relaxation schedule requires a callable");
    RelaxationSchedule s;
    s.kind_ = Kind::Function;
    s.fn_ = std::move(fn);
    s.name_ = std::move(name);
    return s;
}

double RelaxationSchedule::at(std::size_t n) const {
    switch (kind_) {
        case Kind::Constant: return param_;
        case Kind::Explicit: return n < values_.size() ? values_[n] : values_.back();
        case Kind::SqrtBand: {
            double edge = param_ / std::sqrt(static_cast<double>(n) + 1.0);
            return upper_ ? 1.0 / alpha_ - edge : edge;
        }
        case Kind::Function: return fn_(n);
    }
    return param_;
}

std::string RelaxationSchedule::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::Constant: os << "constant(" << param_ << ")"; break;
        case Kind::Explicit: os << "explicit[" << values_.size() << "]"; break;
        case Kind::SqrtBand: os << (upper_ ? "sqrt-band-upper(" : "sqrt-band(") << param_ << ")"; break;
        case Kind::Function: os << name_; break;
    }
    return os.str();
}

ScheduleVerdict validate_relaxation_schedule(double alpha, const RelaxationSchedule& schedule, std::size_t horizon) {
    if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("validate_relaxation_schedule: alpha must lie in (0,1]");
    const double cap = 1.0 / alpha;
    auto in_band = [cap](double l) { return l > 0 && l < cap; };
    std::ostringstream why;
    switch (schedule.kind()) {
        case RelaxationSchedule::Kind::Constant: {
            double l = schedule.parameter();
            if (l > 0 && std::abs(l - cap) <= 1e-15 * cap) {
                why << "lambda = 1/alpha makes every term lambda(1 - alpha lambda) zero";
                return {false, why.str()};
            }
            if (!in_band(l)) {
                why << "lambda = " << l << " outside (0, " << cap << ")";
                return {false, why.str()};
            }
            return {true, "constant inside (0, 1/alpha)"};
        }
        case RelaxationSchedule::Kind::SqrtBand: {
            // Both edges stay strictly inside the band and the terms behave like eps/sqrt(n).
            double l0 = schedule.at(0);
            if (!in_band(l0) || !in_band(schedule.at(1u << 20))) {
                why << "sqrt band leaves (0, " << cap << ") for this alpha";
                return {false, why.str()};
            }
            return {true, "sqrt band: terms of order eps/sqrt(n), divergent sum"};
        }
        case RelaxationSchedule::Kind::Explicit:
        case RelaxationSchedule::Kind::Function: {
            if (horizon == 0) throw std::invalid_argument("validate_relaxation_schedule: horizon must be positive");
            double partial = 0.0;
            for (std::size_t n = 0; n < horizon; ++n) {
                double l = schedule.at(n);
                if (!in_band(l)) {
                    why << "lambda_" << n << " = " << l << " outside (0, " << cap << ")";
                    return {false, why.str()};
                }
                partial += l * (1.0 - alpha * l);
            }
            double need = std::pow(static_cast<double>(horizon), 0.4);
            if (partial < need) {
                why << "partial sum " << partial << " over " << horizon << " terms below horizon^0.4 = " << need;
                return {false, why.str()};
            }
            return {true, "partial sum passes the horizon^0.4 growth test"};
        }
    }
    return {false, "unknown schedule"};
}

}  // namespace splitfix
