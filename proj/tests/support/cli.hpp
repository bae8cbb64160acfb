#pragma once

// Runs the plantid executable as a subprocess.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <regex>
#include <string>
#include <vector>

#include "support/oracles.hpp"

namespace cli {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

/// Runs PLANTID_CLI with `args`, capturing stdout and stderr through files in `scratch`.
inline Result run(const std::vector<std::string>& args, const std::filesystem::path& scratch) {
  static int counter = 0;
  const auto out = scratch / ("cli_" + std::to_string(counter) + ".out");
  const auto err = scratch / ("cli_" + std::to_string(counter++) + ".err");
  std::string cmd = quote(PLANTID_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = oracle::read_bytes(out);
  r.err = oracle::read_bytes(err);
  return r;
}

/// Parses "top-1 accuracy: 93.75% (30/32)"; returns -1 when absent.
inline double accuracy(const std::string& evaluate_output) {
  std::smatch m;
  static const std::regex re(R"(top-1 accuracy: ([0-9.]+)%)");
  return std::regex_search(evaluate_output, m, re) ? std::stod(m[1]) : -1.0;
}

}  // namespace cli
