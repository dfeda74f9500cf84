#include "edgediff/denoiser.hpp"

#include <cmath>

#include "edgediff/error.hpp"
#include "edgediff/parallel.hpp"
#include "edgediff/rng.hpp"

namespace edgediff {

// ---------------------------------------------------------------------------
// Layout and parameters
// ---------------------------------------------------------------------------

void DenoiserConfig::validate() const {
  require(layers >= 1, "denoiser: layers must be at least 1");
  require(node_dim >= 1 && edge_dim >= 1, "denoiser: feature widths must be at least 1");
  require(n_nodes_total >= 1, "denoiser: embedding table needs at least one row");
  require(time_dim >= 2 && time_dim % 2 == 0, "denoiser: time_dim must be even and at least 2");
  // Edge gates multiply node messages elementwise, so the widths must agree.
  require(node_dim == edge_dim, "denoiser: node_dim must equal edge_dim");
  require(csp_bits >= 0, "denoiser: csp_bits must be non-negative");
}

ParamLayout::ParamLayout(const DenoiserConfig& config) : config_(config) {
  config.validate();
  const int d = config.node_dim;
  const int de = config.edge_dim;
  emb = add("emb", d, config.n_nodes_total);
  edge_in_w = add("edge_in.w", de, 1);
  edge_in_b = add("edge_in.b", de, 1);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.P = add(p + "P", de, de);
    s.Q = add(p + "Q", de, d);
    s.R = add(p + "R", de, d);
    s.bn_e_gamma = add(p + "bn_e.gamma", de, 1);
    s.bn_e_beta = add(p + "bn_e.beta", de, 1);
    s.mlp_e_w1 = add(p + "mlp_e.w1", de, de);
    s.mlp_e_b1 = add(p + "mlp_e.b1", de, 1);
    s.mlp_e_w2 = add(p + "mlp_e.w2", de, de);
    s.mlp_e_b2 = add(p + "mlp_e.b2", de, 1);
    s.mlp_t_w1 = add(p + "mlp_t.w1", de, config.time_dim);
    s.mlp_t_b1 = add(p + "mlp_t.b1", de, 1);
    s.mlp_t_w2 = add(p + "mlp_t.w2", de, de);
    s.mlp_t_b2 = add(p + "mlp_t.b2", de, 1);
    s.U = add(p + "U", d, d);
    s.V = add(p + "V", d, d);
    s.bn_h_gamma = add(p + "bn_h.gamma", d, 1);
    s.bn_h_beta = add(p + "bn_h.beta", d, 1);
    layers.push_back(s);
  }
  head_w1 = add("head.w1", de, de);
  head_b1 = add("head.b1", de, 1);
  head_w2 = add("head.w2", 1, de);
  head_b2 = add("head.b2", 1, 1);
  if (config.csp_bits > 0) {
    csp_w = add("csp.w", config.csp_bits, d);
    csp_b = add("csp.b", config.csp_bits, 1);
  }
  buffer_size_ = static_cast<std::size_t>(config.layers) * static_cast<std::size_t>(2 * de + 2 * d);
}

int ParamLayout::add(std::string name, int rows, int cols) {
  slots_.push_back({std::move(name), rows, cols, size_});
  size_ += slots_.back().size();
  return static_cast<int>(slots_.size()) - 1;
}

int ParamLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return static_cast<int>(i);
  return -1;
}

std::size_t ParamLayout::edge_mean_offset(int layer) const {
  return static_cast<std::size_t>(layer) * static_cast<std::size_t>(2 * config_.edge_dim + 2 * config_.node_dim);
}
std::size_t ParamLayout::edge_var_offset(int layer) const {
  return edge_mean_offset(layer) + static_cast<std::size_t>(config_.edge_dim);
}
std::size_t ParamLayout::node_mean_offset(int layer) const {
  return edge_mean_offset(layer) + static_cast<std::size_t>(2 * config_.edge_dim);
}
std::size_t ParamLayout::node_var_offset(int layer) const {
  return node_mean_offset(layer) + static_cast<std::size_t>(config_.node_dim);
}

ConstMatrixMap view(const std::vector<double>& data, const TensorSlot& slot) {
  return ConstMatrixMap(data.data() + slot.offset, slot.rows, slot.cols);
}
MatrixMap view(std::vector<double>& data, const TensorSlot& slot) {
  return MatrixMap(data.data() + slot.offset, slot.rows, slot.cols);
}

MatrixMap DenoiserParams::tensor(int slot) { return view(values, layout->slot(slot)); }
ConstMatrixMap DenoiserParams::tensor(int slot) const { return view(values, layout->slot(slot)); }
Eigen::Map<Eigen::VectorXd> DenoiserParams::buffer(std::size_t offset, int length) {
  return Eigen::Map<Eigen::VectorXd>(buffers.data() + offset, length);
}
Eigen::Map<const Eigen::VectorXd> DenoiserParams::buffer(std::size_t offset, int length) const {
  return Eigen::Map<const Eigen::VectorXd>(buffers.data() + offset, length);
}

DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed) {
  DenoiserParams p;
  p.config = config;
  p.layout = std::make_shared<const ParamLayout>(config);
  p.values.assign(p.layout->size(), 0.0);
  p.buffers.assign(p.layout->buffer_size(), 0.0);
  const ParamLayout& L = *p.layout;

  auto fill_normal = [&](int slot, double stddev) {
    // Each tensor draws from its own stream so adding a head does not shift
    // the initialization of the others.
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(slot)));
    auto w = p.tensor(slot);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = stddev * rng.normal();
  };
  auto linear = [&](int slot) { fill_normal(slot, 1.0 / std::sqrt(static_cast<double>(L.slot(slot).cols))); };
  auto ones = [&](int slot) { p.tensor(slot).setOnes(); };

  fill_normal(L.emb, 1.0 / std::sqrt(static_cast<double>(config.node_dim)));
  linear(L.edge_in_w);
  for (const auto& s : L.layers) {
    for (int slot : {s.P, s.Q, s.R, s.mlp_e_w1, s.mlp_e_w2, s.mlp_t_w1, s.mlp_t_w2, s.U, s.V}) linear(slot);
    ones(s.bn_e_gamma);
    ones(s.bn_h_gamma);
  }
  linear(L.head_w1);
  linear(L.head_w2);
  if (L.csp_w >= 0) linear(L.csp_w);
  for (int l = 0; l < config.layers; ++l) {
    p.buffer(L.edge_var_offset(l), config.edge_dim).setOnes();
    p.buffer(L.node_var_offset(l), config.node_dim).setOnes();
  }
  return p;
}

Eigen::VectorXd timestep_features(int t, int time_dim) {
  require(t >= 0, "timestep features need t >= 0");
  require(time_dim >= 2 && time_dim % 2 == 0, "timestep features need an even width");
  const int half = time_dim / 2;
  Eigen::VectorXd f(time_dim);
  for (int k = 0; k < half; ++k) {
    const double freq = half == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half - 1));
    const double angle = static_cast<double>(t) * freq;
    f(2 * k) = std::sin(angle);
    f(2 * k + 1) = std::cos(angle);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------
//
// Edge features live on an m x m grid with column i*m + j holding edge
// (i, j). Diagonal columns are kept at zero and excluded from every
// reduction; they never influence the output.

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void zero_diagonal_columns(Eigen::MatrixXd& grid, int m) {
  for (int i = 0; i < m; ++i) grid.col(i * m + i).setZero();
}

Eigen::VectorXd off_diagonal_sum(const Eigen::MatrixXd& grid, int m) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(grid.rows());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) s += grid.col(i * m + j);
  return s;
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& upstream, const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).select(upstream, 0.0);
}

struct LayerCache {
  Eigen::MatrixXd e_in, h_in;
  Eigen::MatrixXd e_hat, xhat_e, a1, gate;
  Eigen::MatrixXd Vh, agg, xhat_h, z;
  Eigen::VectorXd t_a1;
};

struct Norm {
  Eigen::VectorXd mean, var, inv_std;
};

}  // namespace

struct ForwardCache {
  struct Sample {
    int m = 0;
    int t = 0;
    std::vector<int> ids;
    Eigen::MatrixXd x;
    Eigen::VectorXd tf;
    std::vector<LayerCache> layers;
    Eigen::MatrixXd e_final, head_a1, out;
  };
  Mode mode = Mode::Train;
  std::vector<Sample> samples;
  std::vector<Norm> edge_norm, node_norm;
  double edge_count = 0.0;
  double node_count = 0.0;
};

namespace {

Norm frozen_norm(const DenoiserParams& p, std::size_t mean_off, std::size_t var_off, int width) {
  Norm n;
  n.mean = p.buffer(mean_off, width);
  n.var = p.buffer(var_off, width);
  n.inv_std = (n.var.array() + kNormEpsilon).rsqrt();
  return n;
}

// Two-pass pooled mean/variance. Per-sample partials are combined in sample
// order so the result does not depend on the thread count.
template <class Partial>
Norm pooled_norm(std::size_t n_samples, double count, int width, int threads, Partial&& partial) {
  std::vector<Eigen::VectorXd> parts(n_samples);
  parallel_for(n_samples, threads, [&](std::size_t s) { parts[s] = partial(s, nullptr); });
  Norm n;
  n.mean = Eigen::VectorXd::Zero(width);
  for (const auto& v : parts) n.mean += v;
  n.mean /= count;
  parallel_for(n_samples, threads, [&](std::size_t s) { parts[s] = partial(s, &n.mean); });
  n.var = Eigen::VectorXd::Zero(width);
  for (const auto& v : parts) n.var += v;
  n.var /= count;
  n.inv_std = (n.var.array() + kNormEpsilon).rsqrt();
  return n;
}

}  // namespace

BatchForward forward_batch(const DenoiserParams& params, std::span<const NoisyGraph> batch, Mode mode, int threads) {
  require(!batch.empty(), "denoiser: empty batch");
  const ParamLayout& L = *params.layout;
  const DenoiserConfig& cfg = params.config;
  const int de = cfg.edge_dim;
  const int d = cfg.node_dim;

  auto cache = std::make_shared<ForwardCache>();
  cache->mode = mode;
  cache->samples.resize(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const NoisyGraph& in = batch[s];
    require(in.xt != nullptr, "denoiser: missing input matrix");
    const int m = static_cast<int>(in.node_ids.size());
    require(m >= 2, "denoiser: subgraphs need at least 2 nodes");
    require(in.xt->rows() == m && in.xt->cols() == m,
            "denoiser: input matrix is " + std::to_string(in.xt->rows()) + "x" + std::to_string(in.xt->cols()) +
                " but " + std::to_string(m) + " node ids were given");
    require(in.t >= 0, "denoiser: negative timestep");
    for (int id : in.node_ids)
      require(id >= 0 && id < cfg.n_nodes_total, "denoiser: unknown node id " + std::to_string(id));
    auto& c = cache->samples[s];
    c.m = m;
    c.t = in.t;
    c.ids.assign(in.node_ids.begin(), in.node_ids.end());
    c.x = *in.xt;
    c.tf = timestep_features(in.t, cfg.time_dim);
    c.layers.resize(static_cast<std::size_t>(cfg.layers));
    cache->edge_count += static_cast<double>(m * (m - 1));
    cache->node_count += static_cast<double>(m);
  }
  const std::size_t B = batch.size();
  auto& S = cache->samples;

  // Layer inputs: scalar edge projection and embedding lookup.
  std::vector<Eigen::MatrixXd> e(B), h(B);
  {
    const auto w_in = params.tensor(L.edge_in_w);
    const auto b_in = params.tensor(L.edge_in_b);
    const auto emb = params.tensor(L.emb);
    parallel_for(B, threads, [&](std::size_t s) {
      const int m = S[s].m;
      e[s].resize(de, m * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) e[s].col(i * m + j) = w_in.col(0) * S[s].x(i, j) + b_in.col(0);
      zero_diagonal_columns(e[s], m);
      h[s].resize(d, m);
      for (int i = 0; i < m; ++i) h[s].col(i) = emb.col(S[s].ids[static_cast<std::size_t>(i)]);
    });
  }

  for (int l = 0; l < cfg.layers; ++l) {
    const LayerSlots& ls = L.layers[static_cast<std::size_t>(l)];
    const auto P = params.tensor(ls.P);
    const auto Q = params.tensor(ls.Q);
    const auto R = params.tensor(ls.R);

    // e_hat_ij = P e_ij + Q h_i + R h_j
    parallel_for(B, threads, [&](std::size_t s) {
      auto& lc = S[s].layers[static_cast<std::size_t>(l)];
      const int m = S[s].m;
      lc.e_in = e[s];
      lc.h_in = h[s];
      const Eigen::MatrixXd Qh = Q * h[s];
      const Eigen::MatrixXd Rh = R * h[s];
      lc.e_hat.noalias() = P * e[s];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) lc.e_hat.col(i * m + j) += Qh.col(i) + Rh.col(j);
      zero_diagonal_columns(lc.e_hat, m);
    });

    Norm en = mode == Mode::Eval
                  ? frozen_norm(params, L.edge_mean_offset(l), L.edge_var_offset(l), de)
                  : pooled_norm(B, cache->edge_count, de, threads, [&](std::size_t s, const Eigen::VectorXd* mean) {
                      const auto& lc = S[s].layers[static_cast<std::size_t>(l)];
                      const int m = S[s].m;
                      if (!mean) return off_diagonal_sum(lc.e_hat, m);
                      Eigen::MatrixXd dev = (lc.e_hat.colwise() - *mean).array().square().matrix();
                      return off_diagonal_sum(dev, m);
                    });

    const auto gamma_e = params.tensor(ls.bn_e_gamma);
    const auto beta_e = params.tensor(ls.bn_e_beta);
    const auto W1 = params.tensor(ls.mlp_e_w1);
    const auto b1 = params.tensor(ls.mlp_e_b1);
    const auto W2 = params.tensor(ls.mlp_e_w2);
    const auto b2 = params.tensor(ls.mlp_e_b2);
    const auto Wt1 = params.tensor(ls.mlp_t_w1);
    const auto bt1 = params.tensor(ls.mlp_t_b1);
    const auto Wt2 = params.tensor(ls.mlp_t_w2);
    const auto bt2 = params.tensor(ls.mlp_t_b2);
    const auto U = params.tensor(ls.U);
    const auto V = params.tensor(ls.V);

    // Edge update, then gated aggregation for the node update.
    parallel_for(B, threads, [&](std::size_t s) {
      auto& lc = S[s].layers[static_cast<std::size_t>(l)];
      const int m = S[s].m;
      lc.xhat_e = ((lc.e_hat.colwise() - en.mean).array().colwise() * en.inv_std.array()).matrix();
      zero_diagonal_columns(lc.xhat_e, m);
      const Eigen::MatrixXd y = (lc.xhat_e.array().colwise() * gamma_e.col(0).array()).matrix().colwise() + beta_e.col(0);
      lc.a1.noalias() = W1 * y;
      lc.a1.colwise() += b1.col(0);
      Eigen::MatrixXd a2 = W2 * relu(lc.a1);
      a2.colwise() += b2.col(0);
      lc.t_a1 = Wt1 * S[s].tf + bt1.col(0);
      const Eigen::VectorXd mt = Wt2 * lc.t_a1.cwiseMax(0.0) + bt2.col(0);
      e[s] = lc.e_in + a2;
      e[s].colwise() += mt;
      zero_diagonal_columns(e[s], m);

      lc.gate = lc.e_hat.unaryExpr([](double v) { return sigmoid(v); });
      lc.Vh.noalias() = V * lc.h_in;
      lc.agg.noalias() = U * lc.h_in;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          if (i != j) lc.agg.col(i) += lc.gate.col(i * m + j).cwiseProduct(lc.Vh.col(j));
    });

    Norm nn = mode == Mode::Eval
                  ? frozen_norm(params, L.node_mean_offset(l), L.node_var_offset(l), d)
                  : pooled_norm(B, cache->node_count, d, threads, [&](std::size_t s, const Eigen::VectorXd* mean) {
                      const auto& lc = S[s].layers[static_cast<std::size_t>(l)];
                      if (!mean) return Eigen::VectorXd(lc.agg.rowwise().sum());
                      return Eigen::VectorXd((lc.agg.colwise() - *mean).array().square().rowwise().sum().matrix());
                    });

    const auto gamma_h = params.tensor(ls.bn_h_gamma);
    const auto beta_h = params.tensor(ls.bn_h_beta);
    parallel_for(B, threads, [&](std::size_t s) {
      auto& lc = S[s].layers[static_cast<std::size_t>(l)];
      lc.xhat_h = ((lc.agg.colwise() - nn.mean).array().colwise() * nn.inv_std.array()).matrix();
      lc.z = (lc.xhat_h.array().colwise() * gamma_h.col(0).array()).matrix().colwise() + beta_h.col(0);
      h[s] = lc.h_in + relu(lc.z);
    });
    cache->edge_norm.push_back(std::move(en));
    cache->node_norm.push_back(std::move(nn));
  }

  // Noise head on ReLU(E^L), symmetrized.
  BatchForward out;
  out.eps_hat.resize(B);
  {
    const auto Wo1 = params.tensor(L.head_w1);
    const auto bo1 = params.tensor(L.head_b1);
    const auto wo2 = params.tensor(L.head_w2);
    const auto bo2 = params.tensor(L.head_b2);
    parallel_for(B, threads, [&](std::size_t s) {
      auto& c = S[s];
      const int m = c.m;
      c.e_final = e[s];
      c.head_a1.noalias() = Wo1 * relu(c.e_final);
      c.head_a1.colwise() += bo1.col(0);
      c.out.noalias() = wo2 * relu(c.head_a1);
      c.out.array() += bo2(0, 0);
      Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
          const double v = 0.5 * (c.out(0, i * m + j) + c.out(0, j * m + i));
          eps(i, j) = v;
          eps(j, i) = v;
        }
      out.eps_hat[s] = std::move(eps);
    });
  }
  out.cache = std::move(cache);
  return out;
}

BatchStats batch_stats(const BatchForward& fwd) {
  BatchStats st;
  for (const auto& n : fwd.cache->edge_norm) {
    st.edge_mean.push_back(n.mean);
    st.edge_var.push_back(n.var);
  }
  for (const auto& n : fwd.cache->node_norm) {
    st.node_mean.push_back(n.mean);
    st.node_var.push_back(n.var);
  }
  return st;
}

std::vector<Eigen::MatrixXd> edge_streams(const BatchForward& fwd, std::size_t sample) {
  const auto& c = fwd.cache->samples.at(sample);
  std::vector<Eigen::MatrixXd> out;
  for (const auto& lc : c.layers) out.push_back(lc.e_in);
  out.push_back(c.e_final);
  return out;
}

Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& xt, int t, std::span<const int> node_ids,
                              const DenoiserParams& params, Mode mode) {
  const NoisyGraph g{node_ids, &xt, t};
  return forward_batch(params, std::span<const NoisyGraph>(&g, 1), mode).eps_hat.front();
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

// Gradient of a normalization layer y = gamma * xhat + beta with respect to
// its input, given the pooled sums of dy and dy * xhat. With frozen
// statistics the layer is affine.
Eigen::MatrixXd norm_input_grad(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat, const Eigen::VectorXd& gamma,
                                const Norm& n, const Eigen::VectorXd& sum_dy, const Eigen::VectorXd& sum_dy_xhat,
                                double count, Mode mode) {
  const Eigen::ArrayXd scale = gamma.array() * n.inv_std.array();
  if (mode == Mode::Eval) return (dy.array().colwise() * scale).matrix();
  Eigen::ArrayXXd centered = dy.array();
  centered.colwise() -= (sum_dy.array() / count);
  centered -= xhat.array().colwise() * (sum_dy_xhat.array() / count);
  return (centered.colwise() * scale).matrix();
}

}  // namespace

void backward_batch(const DenoiserParams& params, const BatchForward& fwd, std::span<const Eigen::MatrixXd> d_eps_hat,
                    std::vector<double>& grad, int threads, std::span<const Eigen::MatrixXd> emb_extra) {
  const ParamLayout& L = *params.layout;
  const DenoiserConfig& cfg = params.config;
  const ForwardCache& cache = *fwd.cache;
  const auto& S = cache.samples;
  const std::size_t B = S.size();
  require(d_eps_hat.size() == B, "backward: one upstream gradient per sample required");
  require(emb_extra.empty() || emb_extra.size() == B, "backward: embedding gradient count mismatch");
  require(grad.size() == L.size(), "backward: gradient vector has the wrong size");
  const int de = cfg.edge_dim;
  const int d = cfg.node_dim;

  // Per-sample dense gradient slabs, reduced in sample order at the end.
  const std::size_t dense_begin = L.dense_begin();
  const std::size_t dense_size = L.size() - dense_begin;
  std::vector<std::vector<double>> slab(B, std::vector<double>(dense_size, 0.0));
  auto sample_view = [&](std::size_t s, int slot) {
    const TensorSlot& ts = L.slot(slot);
    return MatrixMap(slab[s].data() + (ts.offset - dense_begin), ts.rows, ts.cols);
  };

  std::vector<Eigen::MatrixXd> de_grid(B), dh(B);

  // Head.
  {
    const auto Wo1 = params.tensor(L.head_w1);
    const auto wo2 = params.tensor(L.head_w2);
    parallel_for(B, threads, [&](std::size_t s) {
      const auto& c = S[s];
      const int m = c.m;
      const Eigen::MatrixXd& D = d_eps_hat[s];
      require(D.rows() == m && D.cols() == m, "backward: upstream gradient shape mismatch");
      Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(1, m * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          if (i != j) d_out(0, i * m + j) = 0.5 * (D(i, j) + D(j, i));
      const Eigen::MatrixXd hr1 = relu(c.head_a1);
      sample_view(s, L.head_w2).noalias() += d_out * hr1.transpose();
      sample_view(s, L.head_b2)(0, 0) += d_out.sum();
      const Eigen::MatrixXd d_a1 = relu_mask(wo2.transpose() * d_out, c.head_a1);
      sample_view(s, L.head_w1).noalias() += d_a1 * relu(c.e_final).transpose();
      sample_view(s, L.head_b1) += d_a1.rowwise().sum();
      de_grid[s] = relu_mask(Wo1.transpose() * d_a1, c.e_final);
      zero_diagonal_columns(de_grid[s], m);
      dh[s] = Eigen::MatrixXd::Zero(d, m);
    });
  }

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerSlots& ls = L.layers[static_cast<std::size_t>(l)];
    const Norm& en = cache.edge_norm[static_cast<std::size_t>(l)];
    const Norm& nn = cache.node_norm[static_cast<std::size_t>(l)];
    const Eigen::VectorXd gamma_e = params.tensor(ls.bn_e_gamma).col(0);
    const Eigen::VectorXd gamma_h = params.tensor(ls.bn_h_gamma).col(0);
    const auto P = params.tensor(ls.P);
    const auto Q = params.tensor(ls.Q);
    const auto R = params.tensor(ls.R);
    const auto W1 = params.tensor(ls.mlp_e_w1);
    const auto W2 = params.tensor(ls.mlp_e_w2);
    const auto Wt2 = params.tensor(ls.mlp_t_w2);
    const auto U = params.tensor(ls.U);
    const auto V = params.tensor(ls.V);
    const auto beta_e = params.tensor(ls.bn_e_beta);

    // Node normalization: dz and its pooled sums.
    std::vector<Eigen::MatrixXd> dz(B);
    std::vector<Eigen::VectorXd> part_dz(B), part_dz_x(B);
    parallel_for(B, threads, [&](std::size_t s) {
      const auto& lc = S[s].layers[static_cast<std::size_t>(l)];
      dz[s] = relu_mask(dh[s], lc.z);
      part_dz[s] = dz[s].rowwise().sum();
      part_dz_x[s] = dz[s].cwiseProduct(lc.xhat_h).rowwise().sum();
    });
    Eigen::VectorXd sum_dz = Eigen::VectorXd::Zero(d), sum_dz_x = Eigen::VectorXd::Zero(d);
    for (std::size_t s = 0; s < B; ++s) {
      sum_dz += part_dz[s];
      sum_dz_x += part_dz_x[s];
    }
    view(grad, L.slot(ls.bn_h_beta)) += sum_dz;
    view(grad, L.slot(ls.bn_h_gamma)) += sum_dz_x;

    // Aggregation and edge MLP back to the edge normalization output.
    std::vector<Eigen::MatrixXd> d_ehat(B), dy(B);
    std::vector<Eigen::VectorXd> part_dy(B), part_dy_x(B);
    parallel_for(B, threads, [&](std::size_t s) {
      const auto& c = S[s];
      const auto& lc = c.layers[static_cast<std::size_t>(l)];
      const int m = c.m;
      // dz pooled with gamma folded in: d(xhat) = dz * gamma.
      const Eigen::MatrixXd d_agg = norm_input_grad((dz[s].array().colwise() * gamma_h.array()).matrix(), lc.xhat_h,
                                                    Eigen::VectorXd::Ones(d), nn, (sum_dz.array() * gamma_h.array()).matrix(),
                                                    (sum_dz_x.array() * gamma_h.array()).matrix(), cache.node_count,
                                                    cache.mode);
      // dh already holds the residual path.
      sample_view(s, ls.U).noalias() += d_agg * lc.h_in.transpose();
      dh[s].noalias() += U.transpose() * d_agg;
      Eigen::MatrixXd dVh = Eigen::MatrixXd::Zero(d, m);
      d_ehat[s] = Eigen::MatrixXd::Zero(de, m * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          const auto g = lc.gate.col(i * m + j);
          dVh.col(j) += d_agg.col(i).cwiseProduct(g);
          const Eigen::VectorXd d_gate = d_agg.col(i).cwiseProduct(lc.Vh.col(j));
          d_ehat[s].col(i * m + j) = d_gate.cwiseProduct(g).cwiseProduct((1.0 - g.array()).matrix());
        }
      sample_view(s, ls.V).noalias() += dVh * lc.h_in.transpose();
      dh[s].noalias() += V.transpose() * dVh;

      // e_out = e_in + MLP_e(y) + MLP_t(t); diagonal columns carry no gradient.
      const Eigen::MatrixXd& d_eout = de_grid[s];
      const Eigen::VectorXd d_mt = off_diagonal_sum(d_eout, m);
      const Eigen::VectorXd t_r1 = lc.t_a1.cwiseMax(0.0);
      sample_view(s, ls.mlp_t_w2).noalias() += d_mt * t_r1.transpose();
      sample_view(s, ls.mlp_t_b2) += d_mt;
      const Eigen::VectorXd d_ta1 = (lc.t_a1.array() > 0.0).select(Wt2.transpose() * d_mt, 0.0);
      sample_view(s, ls.mlp_t_w1).noalias() += d_ta1 * c.tf.transpose();
      sample_view(s, ls.mlp_t_b1) += d_ta1;

      const Eigen::MatrixXd r1 = relu(lc.a1);
      sample_view(s, ls.mlp_e_w2).noalias() += d_eout * r1.transpose();
      sample_view(s, ls.mlp_e_b2) += d_eout.rowwise().sum();
      Eigen::MatrixXd d_a1 = relu_mask(W2.transpose() * d_eout, lc.a1);
      zero_diagonal_columns(d_a1, m);
      const Eigen::MatrixXd y =
          (lc.xhat_e.array().colwise() * gamma_e.array()).matrix().colwise() + beta_e.col(0);
      Eigen::MatrixXd y_off = y;
      zero_diagonal_columns(y_off, m);
      sample_view(s, ls.mlp_e_w1).noalias() += d_a1 * y_off.transpose();
      sample_view(s, ls.mlp_e_b1) += d_a1.rowwise().sum();
      dy[s] = W1.transpose() * d_a1;
      zero_diagonal_columns(dy[s], m);
      part_dy[s] = dy[s].rowwise().sum();
      part_dy_x[s] = dy[s].cwiseProduct(lc.xhat_e).rowwise().sum();
    });
    Eigen::VectorXd sum_dy = Eigen::VectorXd::Zero(de), sum_dy_x = Eigen::VectorXd::Zero(de);
    for (std::size_t s = 0; s < B; ++s) {
      sum_dy += part_dy[s];
      sum_dy_x += part_dy_x[s];
    }
    view(grad, L.slot(ls.bn_e_beta)) += sum_dy;
    view(grad, L.slot(ls.bn_e_gamma)) += sum_dy_x;

    // Edge normalization and the e_hat projections.
    parallel_for(B, threads, [&](std::size_t s) {
      const auto& c = S[s];
      const auto& lc = c.layers[static_cast<std::size_t>(l)];
      const int m = c.m;
      Eigen::MatrixXd d_norm_in =
          norm_input_grad((dy[s].array().colwise() * gamma_e.array()).matrix(), lc.xhat_e, Eigen::VectorXd::Ones(de), en,
                          (sum_dy.array() * gamma_e.array()).matrix(), (sum_dy_x.array() * gamma_e.array()).matrix(),
                          cache.edge_count, cache.mode);
      zero_diagonal_columns(d_norm_in, m);
      d_ehat[s] += d_norm_in;

      sample_view(s, ls.P).noalias() += d_ehat[s] * lc.e_in.transpose();
      Eigen::MatrixXd de_in = de_grid[s];
      de_in.noalias() += P.transpose() * d_ehat[s];
      zero_diagonal_columns(de_in, m);
      Eigen::MatrixXd dQh = Eigen::MatrixXd::Zero(de, m), dRh = Eigen::MatrixXd::Zero(de, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          dQh.col(i) += d_ehat[s].col(i * m + j);
          dRh.col(j) += d_ehat[s].col(i * m + j);
        }
      sample_view(s, ls.Q).noalias() += dQh * lc.h_in.transpose();
      sample_view(s, ls.R).noalias() += dRh * lc.h_in.transpose();
      dh[s].noalias() += Q.transpose() * dQh;
      dh[s].noalias() += R.transpose() * dRh;
      de_grid[s] = std::move(de_in);
    });
  }

  // Scalar edge projection, then reduce slabs and scatter embedding rows.
  parallel_for(B, threads, [&](std::size_t s) {
    const auto& c = S[s];
    const int m = c.m;
    auto dw = sample_view(s, L.edge_in_w);
    auto db = sample_view(s, L.edge_in_b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        if (i == j) continue;
        dw.col(0) += de_grid[s].col(i * m + j) * c.x(i, j);
        db.col(0) += de_grid[s].col(i * m + j);
      }
  });
  Eigen::Map<Eigen::VectorXd> dense(grad.data() + dense_begin, static_cast<Eigen::Index>(dense_size));
  for (std::size_t s = 0; s < B; ++s)
    dense += Eigen::Map<const Eigen::VectorXd>(slab[s].data(), static_cast<Eigen::Index>(dense_size));
  auto demb = view(grad, L.slot(L.emb));
  for (std::size_t s = 0; s < B; ++s) {
    const auto& c = S[s];
    for (int i = 0; i < c.m; ++i) {
      demb.col(c.ids[static_cast<std::size_t>(i)]) += dh[s].col(i);
      if (!emb_extra.empty()) demb.col(c.ids[static_cast<std::size_t>(i)]) += emb_extra[s].col(i);
    }
  }
}

}  // namespace edgediff
