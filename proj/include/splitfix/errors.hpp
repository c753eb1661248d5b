#pragma once

#include <stdexcept>
#include <string>

namespace splitfix {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A step size, relaxation parameter or structural hypothesis is outside what the
// algorithm's convergence statement requires. `rule` names the condition.
class PreconditionError : public std::invalid_argument {
public:
    PreconditionError(std::string rule, const std::string& detail)
        : std::invalid_argument(rule + ": " + detail), rule_(std::move(rule)) {}
    const std::string& rule() const { return rule_; }

private:
    std::string rule_;
};

}  // namespace splitfix
