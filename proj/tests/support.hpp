#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "edgediff/denoiser.hpp"
#include "edgediff/ingest.hpp"
#include "edgediff/rng.hpp"

namespace testing_support {

/// Initialized parameters with every entry (biases, norm scale/shift,
/// running statistics included) perturbed so no path is trivially inactive.
inline edgediff::DenoiserParams random_params(const edgediff::DenoiserConfig& config, std::uint64_t seed) {
  edgediff::DenoiserParams p = edgediff::init_params(config, seed);
  edgediff::Rng rng(seed ^ 0x5eedULL);
  for (double& v : p.values) v += 0.2 * rng.normal();
  for (std::size_t i = 0; i < p.buffers.size(); ++i) p.buffers[i] = 0.3 * rng.normal();
  const auto& L = *p.layout;
  for (int l = 0; l < config.layers; ++l) {
    p.buffer(L.edge_var_offset(l), config.edge_dim).array() = 0.5 + p.buffer(L.edge_var_offset(l), config.edge_dim).array().abs();
    p.buffer(L.node_var_offset(l), config.node_dim).array() = 0.5 + p.buffer(L.node_var_offset(l), config.node_dim).array().abs();
  }
  return p;
}

inline Eigen::MatrixXd random_symmetric(int m, edgediff::Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) x(i, j) = x(j, i) = scale * (2.0 * rng.uniform() - 1.0);
  return x;
}

/// Edge scores in [0,1], symmetric, zero diagonal.
inline Eigen::MatrixXd random_scores(int m, edgediff::Rng& rng) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) x(i, j) = x(j, i) = rng.uniform();
  return x;
}

/// |a - n| / max(|a|, |n|, floor). A central difference with step 1e-6 on a
/// loss of a few units resolves gradients only to about 1e-9 absolute, so
/// entries below the floor are judged on |a - n| < 1e-4 * floor instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(std::vector<double>& values, std::size_t index, double step,
                                 const std::function<double()>& loss) {
  const double saved = values[index];
  values[index] = saved + step;
  const double up = loss();
  values[index] = saved - step;
  const double down = loss();
  values[index] = saved;
  return (up - down) / (2.0 * step);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("edgediff_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
             std::to_string(std::hash<std::string>{}(tag + std::to_string(counter()++))));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

/// Synthetic corpus written to `dir` and built with default graph options.
inline edgediff::HeteroGraph synth_graph(const edgediff::SynthConfig& config, const std::filesystem::path& dir) {
  using namespace edgediff;
  write_synthetic_corpus(generate_synthetic_corpus(config), dir);
  return build_hetero_graph(parse_recipe_corpus(dir / "recipes.tsv"), parse_associations(dir / "associations.tsv"),
                            {}, {}, parse_categories(dir / "categories.tsv"));
}

}  // namespace testing_support
