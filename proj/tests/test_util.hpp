#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "tsw/tensor.hpp"

namespace testutil {

/// Random set with `tensors` entries, each rank 1 or 2, values standard
/// normal. Zero or equal values are possible only by chance.
inline tsw::NamedTensorSet random_set(std::mt19937_64& gen, std::size_t tensors, std::size_t max_numel) {
  std::uniform_int_distribution<std::size_t> len(1, max_numel);
  std::normal_distribution<float> val(0.0f, 1.0f);
  tsw::NamedTensorSet s;
  for (std::size_t t = 0; t < tensors; ++t) {
    const std::size_t n = len(gen);
    tsw::Shape shape = {n};
    if (n % 2 == 0 && gen() % 2 == 0) shape = {2, n / 2};
    std::vector<float> data(n);
    for (auto& v : data) v = val(gen);
    s.add("t" + std::to_string(t), shape, std::move(data));
  }
  return s;
}

inline tsw::NamedTensorSet single(std::vector<float> values, const std::string& name = "w") {
  tsw::NamedTensorSet s;
  const std::uint64_t n = values.size();
  s.add(name, {n}, std::move(values));
  return s;
}

inline const std::vector<float>& values(const tsw::NamedTensorSet& s, const std::string& name = "w") {
  return s.at(name).data;
}

/// Fresh empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("tsw_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command and captures stdout (stderr is discarded).
inline CommandResult run(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>/dev/null").c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace testutil
