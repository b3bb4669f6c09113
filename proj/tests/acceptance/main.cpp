#include <CLI11.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <iostream>
#include <vector>

#include "criteria.hpp"

namespace elm::acceptance {

std::string format(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

}  // namespace elm::acceptance

namespace {

struct Criterion {
  const char* name;
  elm::acceptance::Outcome (*run)();
};

const std::vector<Criterion> kCriteria = {
    {"gradient integrity", elm::acceptance::gradient_integrity},
    {"normalization oracle", elm::acceptance::normalization_oracle},
    {"NCE consistency", elm::acceptance::nce_consistency},
    {"MIS stationarity", elm::acceptance::mis_stationarity},
    {"IS convergence", elm::acceptance::is_convergence},
    {"method ordering", elm::acceptance::method_ordering},
    {"evaluation kernels", elm::acceptance::evaluation_kernels},
    {"MLE divergence guard", elm::acceptance::mle_divergence_guard},
    {"pipeline determinism", elm::acceptance::pipeline_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance checks; one PASS/FAIL line per criterion");
  std::vector<int> selected;
  app.add_option("--criterion", selected, "Criterion numbers to run (default: all)")
      ->check(CLI::Range(1, static_cast<int>(kCriteria.size())));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    for (int i = 1; i <= static_cast<int>(kCriteria.size()); ++i) selected.push_back(i);
  }
  int failed = 0;
  for (int n : selected) {
    const Criterion& c = kCriteria[static_cast<std::size_t>(n - 1)];
    const auto start = std::chrono::steady_clock::now();
    elm::acceptance::Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("unexpected exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << n << " (" << c.name << "): " << (outcome.pass ? "PASS" : "FAIL") << "  "
              << outcome.detail << " [" << elm::acceptance::format("%.1f", secs) << " s]" << std::endl;
    if (!outcome.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
