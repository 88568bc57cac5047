#include <cstdio>
#include <fstream>

#include "weaktraj/validation.hpp"

int main(int argc, char** argv) {
    weaktraj::AcceptanceOptions opt;
    opt.on_result = [](const weaktraj::CheckResult& r) { std::printf("%s\n", weaktraj::format_result(r).c_str()); std::fflush(stdout); };
    const auto results = weaktraj::run_acceptance(opt);
    if (argc > 1) std::ofstream(argv[1]) << weaktraj::acceptance_report(results).dump(2) << '\n';
    std::size_t failed = 0;
    for (const auto& r : results) failed += !r.passed;
    std::printf("%zu of %zu criteria passed\n", results.size() - failed, results.size());
    return failed == 0 ? 0 : 1;
}
