#include "edgediff/trainer.hpp"

#include <cmath>

#include "edgediff/error.hpp"
#include "edgediff/parallel.hpp"
#include "edgediff/rng.hpp"

namespace edgediff {

namespace {

constexpr std::uint64_t kValidationNoiseStream = 0x7a11d;

void check_finite(const LossAndGradients& lg, const ParamLayout& layout) {
  for (const auto& slot : layout.slots()) {
    for (std::size_t i = 0; i < slot.size(); ++i)
      if (!std::isfinite(lg.grad[slot.offset + i]))
        fail("non-finite gradient in parameter '" + slot.name + "'");
  }
  if (!std::isfinite(lg.loss)) fail("non-finite loss");
}

}  // namespace

LossAndGradients loss_and_gradients(const DenoiserParams& params, std::span<const NoisyExample> batch,
                                    const NoiseSchedule& sched, const CspObjective& csp, int threads) {
  require(!batch.empty(), "loss_and_gradients: empty batch");
  const std::size_t B = batch.size();
  std::vector<Eigen::MatrixXd> xt(B);
  std::vector<NoisyGraph> inputs(B);
  for (std::size_t s = 0; s < B; ++s) {
    xt[s] = forward_sample(batch[s].x0, batch[s].t, batch[s].eps, sched);
    inputs[s] = {batch[s].node_ids, &xt[s], batch[s].t};
  }
  const BatchForward fwd = forward_batch(params, inputs, Mode::Train, threads);

  LossAndGradients out;
  out.grad.assign(params.layout->size(), 0.0);
  std::vector<Eigen::MatrixXd> upstream(B);
  for (std::size_t s = 0; s < B; ++s) {
    const int m = static_cast<int>(batch[s].node_ids.size());
    const double pairs = static_cast<double>(m * (m - 1) / 2);
    out.recon += upper_triangle_mse(fwd.eps_hat[s], batch[s].eps);
    upstream[s] = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        upstream[s](i, j) = 2.0 * (fwd.eps_hat[s](i, j) - batch[s].eps(i, j)) / (static_cast<double>(B) * pairs);
  }
  out.recon /= static_cast<double>(B);

  std::vector<Eigen::MatrixXd> emb_extra;
  const ParamLayout& L = *params.layout;
  if (csp.active()) {
    require(L.csp_w >= 0, "fingerprint objective requested but the model has no fingerprint head");
    require(csp.targets->bits.rows() == params.config.csp_bits,
            "fingerprint targets have " + std::to_string(csp.targets->bits.rows()) + " bits but the head predicts " +
                std::to_string(params.config.csp_bits));
    int occurrences = 0;
    for (const auto& ex : batch)
      for (int id : ex.node_ids)
        if (csp.targets->has(id)) ++occurrences;
    if (occurrences > 0) {
      const double scale = csp.lambda / occurrences;
      const auto W = params.tensor(L.csp_w);
      const auto b = params.tensor(L.csp_b);
      const auto emb = params.tensor(L.emb);
      const int d = params.config.node_dim;
      std::vector<Eigen::MatrixXd> dW(B);
      std::vector<Eigen::VectorXd> db(B);
      std::vector<double> sample_loss(B, 0.0);
      emb_extra.resize(B);
      parallel_for(B, threads, [&](std::size_t s) {
        const auto ids = batch[s].node_ids;
        emb_extra[s] = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(ids.size()));
        dW[s] = Eigen::MatrixXd::Zero(W.rows(), W.cols());
        db[s] = Eigen::VectorXd::Zero(b.rows());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!csp.targets->has(ids[i])) continue;
          auto d_emb = emb_extra[s].col(static_cast<Eigen::Index>(i));
          sample_loss[s] += csp_loss_grad(emb.col(ids[i]), W, b.col(0), csp.targets->target(ids[i]), scale, d_emb,
                                          dW[s], db[s]);
        }
      });
      auto gW = view(out.grad, L.slot(L.csp_w));
      auto gb = view(out.grad, L.slot(L.csp_b));
      for (std::size_t s = 0; s < B; ++s) {
        out.csp += sample_loss[s];
        gW += dW[s];
        gb += db[s];
      }
      out.csp /= occurrences;
    }
  }
  out.loss = out.recon + (csp.active() ? csp.lambda * out.csp : 0.0);
  backward_batch(params, fwd, upstream, out.grad, threads, emb_extra);
  out.stats = batch_stats(fwd);
  return out;
}

LossAndGradients parameter_gradients(std::span<const Subgraph* const> batch, const DenoiserParams& params,
                                     const NoiseSchedule& sched, Rng& rng, const CspObjective& csp, int threads) {
  std::vector<NoisyExample> examples;
  examples.reserve(batch.size());
  for (const Subgraph* sg : batch) {
    NoiseDraw draw = draw_noise(sg->size(), sched, rng);
    examples.push_back({sg->node_ids, to_model_space(sg->x0), draw.t, std::move(draw.eps)});
  }
  LossAndGradients lg = loss_and_gradients(params, examples, sched, csp, threads);
  check_finite(lg, *params.layout);
  return lg;
}

double evaluate_mse(const DenoiserParams& params, std::span<const Subgraph> samples, const NoiseSchedule& sched,
                    std::uint64_t noise_seed, int threads) {
  require(!samples.empty(), "evaluate_mse: no samples");
  std::vector<double> per(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t k) {
    Rng rng(derive_seed(noise_seed, k));
    const Subgraph& sg = samples[k];
    const NoiseDraw draw = draw_noise(sg.size(), sched, rng);
    const Eigen::MatrixXd xt = forward_sample(to_model_space(sg.x0), draw.t, draw.eps, sched);
    per[k] = upper_triangle_mse(predict_noise(xt, draw.t, sg.node_ids, params, Mode::Eval), draw.eps);
  });
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(per.size());
}

std::uint64_t validation_noise_seed(const SubgraphDataset& ds) {
  return derive_seed(ds.seed ^ ds.graph_hash, kValidationNoiseStream);
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
    params[i] -= config_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
  }
}

Checkpoint train(const SubgraphDataset& dataset, const DenoiserConfig& config, const NoiseSchedule& sched,
                 const TrainConfig& tc, const CspObjective& csp) {
  require(!dataset.train.empty(), "train: empty training split");
  require(!dataset.validation.empty(), "train: empty validation split");
  require(tc.batch_size >= 1, "train: batch size must be at least 1");
  require(tc.epochs >= 1, "train: epochs must be at least 1");
  require(tc.max_steps >= 0, "train: max_steps must be non-negative");
  require(tc.norm_momentum >= 0.0 && tc.norm_momentum <= 1.0, "train: normalization momentum must lie in [0,1]");
  require(tc.adam.lr > 0.0, "train: learning rate must be positive");
  if (csp.active()) require(config.csp_bits == kFingerprintBits, "train: fingerprint objective needs csp_bits = 881");

  Checkpoint ckpt{init_params(config, derive_seed(tc.seed, 11)), sched, {}};
  TrainingMeta& meta = ckpt.meta;
  meta.seed = tc.seed;
  meta.batch_size = tc.batch_size;
  meta.train_m = dataset.m;
  meta.csp_lambda = csp.active() ? csp.lambda : 0.0;
  meta.val_noise_seed = validation_noise_seed(dataset);
  meta.graph_hash = dataset.graph_hash;

  DenoiserParams& params = ckpt.params;
  const ParamLayout& L = *params.layout;
  Adam adam(L.size(), tc.adam);
  Rng order_rng(derive_seed(tc.seed, 12));
  Rng noise_rng(derive_seed(tc.seed, 13));
  std::vector<std::size_t> order(dataset.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  bool stop = false;
  for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      if (tc.max_steps > 0 && meta.steps >= tc.max_steps) {
        stop = true;
        break;
      }
      std::vector<const Subgraph*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size)); ++k)
        batch.push_back(&dataset.train[order[k]]);
      LossAndGradients lg;
      try {
        lg = parameter_gradients(batch, params, sched, noise_rng, csp, tc.threads);
      } catch (const Error&) {
        meta.diverged = true;
        stop = true;
        break;
      }
      adam.step(params.values, lg.grad);
      const double mom = tc.norm_momentum;
      for (int l = 0; l < config.layers; ++l) {
        const auto ls = static_cast<std::size_t>(l);
        auto em = params.buffer(L.edge_mean_offset(l), config.edge_dim);
        auto ev = params.buffer(L.edge_var_offset(l), config.edge_dim);
        auto nm = params.buffer(L.node_mean_offset(l), config.node_dim);
        auto nv = params.buffer(L.node_var_offset(l), config.node_dim);
        em = (1.0 - mom) * em + mom * lg.stats.edge_mean[ls];
        ev = (1.0 - mom) * ev + mom * lg.stats.edge_var[ls];
        nm = (1.0 - mom) * nm + mom * lg.stats.node_mean[ls];
        nv = (1.0 - mom) * nv + mom * lg.stats.node_var[ls];
      }
      ++meta.steps;
      epoch_loss += lg.recon;
      ++batches;
    }
    if (batches == 0) break;
    ++meta.epochs;
    meta.train_curve.push_back(epoch_loss / batches);
    meta.val_curve.push_back(evaluate_mse(params, dataset.validation, sched, meta.val_noise_seed, tc.threads));
  }
  meta.final_val_mse = evaluate_mse(params, dataset.validation, sched, meta.val_noise_seed, tc.threads);
  return ckpt;
}

}  // namespace edgediff
