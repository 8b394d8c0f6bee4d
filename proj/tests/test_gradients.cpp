#include <doctest.h>

#include "gradient_suite.hpp"

TEST_CASE("finite differences: linear map is exact to float noise") {
    using namespace btk;
    auto f = [](std::vector<Tensor<double>>& in) { return scale(in[0], 3.0); };
    Rng rng(1);
    std::vector<Tensor<double>> inputs = {Tensor<double>::randn({4, 3}, rng)};
    FdReport r = finite_diff_check<double>(f, std::move(inputs));
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-8);
}

TEST_CASE("finite differences: every kernel passes at tol 1e-4") {
    auto result = gradient_suite::run(10);
    INFO("worst case: ", result.worst_case, " rel err ", result.worst);
    for (const auto& [name, r] : result.reports) {
        INFO(name, ": max_rel_err=", r.max_rel_err, " probes=", r.probes);
        CHECK(r.pass);
    }
    CHECK(result.pass);
}

TEST_CASE("finite differences: tiny end-to-end model") {
    auto result = gradient_suite::run_end_to_end(2);
    INFO("worst case: ", result.worst_case, " rel err ", result.worst);
    CHECK(result.pass);
}
