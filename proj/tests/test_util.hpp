#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "vtcal/experiment.hpp"
#include "vtcal/numeric.hpp"
#include "vtcal/rng.hpp"

namespace vtcal::testing {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.values()) x = scale * rng.normal();
  return m;
}

inline Vec random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
  Vec v(d);
  for (double& x : v.values()) x = scale * rng.normal();
  return v;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vtcal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Compares against tests/golden/<name>.txt (one %.17g value per line).
// VTCAL_UPDATE_GOLDEN=1 rewrites the file instead.
inline void expect_golden(const std::string& name, std::span<const double> values, double tol) {
  const std::filesystem::path path = std::filesystem::path(VTCAL_GOLDEN_DIR) / (name + ".txt");
  if (const char* u = std::getenv("VTCAL_UPDATE_GOLDEN"); u && std::string(u) == "1") {
    std::ofstream out(path);
    char buf[40];
    for (double v : values) {
      std::snprintf(buf, sizeof(buf), "%.17g\n", v);
      out << buf;
    }
    GTEST_SKIP() << "rewrote " << path;
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::vector<double> expected;
  for (double v; in >> v;) expected.push_back(v);
  ASSERT_EQ(expected.size(), values.size()) << path;
  for (std::size_t i = 0; i < values.size(); ++i) {
    ASSERT_NEAR(values[i], expected[i], tol) << name << " entry " << i;
  }
}

// A reduced world/task that keeps end-to-end tests fast.
inline RunConfig small_config(int scenes = 6) {
  RunConfig c;
  c.task.num_scenes = scenes;
  c.task.pairs_per_split = 2;
  return c;
}

}  // namespace vtcal::testing
