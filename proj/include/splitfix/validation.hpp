#pragma once

#include <string>
#include <vector>

#include "splitfix/io.hpp"

namespace splitfix {

struct CheckOutcome {
    std::string module;
    std::string name;
    bool passed = false;
    std::string inequality;  // the property being tested
    double worst = 0.0;      // largest violation found (<= 0 or below tolerance when passing)
    std::string detail;
};

// core-linalg, op-algebra, drivers, splitting, applications, netanalysis, cli
const std::vector<std::string>& validation_modules();
// Faults recognised by run_validation; each one breaks exactly one check.
const std::vector<std::string>& validation_faults();

// selector: "all" or a module name. fault: empty, or a name from validation_faults().
std::vector<CheckOutcome> run_validation(const std::string& selector = "all", const std::string& fault = "");
Json validation_report(const std::vector<CheckOutcome>& results);

}  // namespace splitfix
