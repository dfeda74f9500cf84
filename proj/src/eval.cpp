#include "edgediff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "edgediff/error.hpp"
#include "edgediff/parallel.hpp"
#include "edgediff/rng.hpp"
#include "edgediff/text_io.hpp"

namespace edgediff {

namespace {

double squared_distance(const Eigen::MatrixXd& points, Eigen::Index i, const Eigen::MatrixXd& centers, Eigen::Index c) {
  return (points.row(i) - centers.row(c)).squaredNorm();
}

// Nearest center with ties broken toward the lower index.
std::pair<int, double> nearest(const Eigen::MatrixXd& points, Eigen::Index i, const Eigen::MatrixXd& centers) {
  int best = 0;
  double best_d = squared_distance(points, i, centers, 0);
  for (Eigen::Index c = 1; c < centers.rows(); ++c) {
    const double dist = squared_distance(points, i, centers, c);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

std::vector<int> dense_labels(const std::vector<int>& labels, int& n_labels) {
  std::map<int, int> ids;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids.emplace(labels[i], static_cast<int>(ids.size())).first->second;
  n_labels = static_cast<int>(ids.size());
  return out;
}

}  // namespace

KMeansResult kmeans_cluster(const Eigen::MatrixXd& points, int k, int max_iters, std::uint64_t seed) {
  require(k >= 1, "kmeans: k must be at least 1");
  const Eigen::Index n = points.rows();
  require(n >= k, "kmeans: k = " + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
  require(max_iters >= 1, "kmeans: max_iters must be at least 1");
  require(points.allFinite(), "kmeans: non-finite input");

  // k-means++: first center uniform, later ones with probability
  // proportional to squared distance from the nearest chosen center.
  Rng rng(seed);
  KMeansResult res;
  res.centers.resize(k, points.cols());
  res.centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, res.centers, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double run = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        run += d2[static_cast<std::size_t>(i)];
        if (run > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    res.centers.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, res.centers, c));
  }

  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto [c, dd] = nearest(points, i, res.centers);
      if (res.labels[static_cast<std::size_t>(i)] != c) changed = true;
      res.labels[static_cast<std::size_t>(i)] = c;
      dist[static_cast<std::size_t>(i)] = dd;
      inertia += dd;
    }
    res.inertia_history.push_back(inertia);
    res.iterations = iter + 1;
    if (!changed && iter > 0) {
      res.converged = true;
      break;
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        res.centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      // Farthest point from its own center; ties to the lower index.
      Eigen::Index far = 0;
      for (Eigen::Index i = 1; i < n; ++i)
        if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
      res.centers.row(c) = points.row(far);
      dist[static_cast<std::size_t>(far)] = 0.0;
      changed = true;
    }
  }
  return res;
}

double nmi_score(const std::vector<int>& a, const std::vector<int>& b) {
  require(a.size() == b.size(), "nmi: labelings have lengths " + std::to_string(a.size()) + " and " +
                                    std::to_string(b.size()));
  require(!a.empty(), "nmi: empty labelings");
  int ka = 0, kb = 0;
  const std::vector<int> da = dense_labels(a, ka);
  const std::vector<int> db = dense_labels(b, kb);
  const double n = static_cast<double>(a.size());
  std::vector<double> ca(static_cast<std::size_t>(ka), 0.0), cb(static_cast<std::size_t>(kb), 0.0);
  std::vector<double> joint(static_cast<std::size_t>(ka * kb), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[static_cast<std::size_t>(da[i])] += 1.0;
    cb[static_cast<std::size_t>(db[i])] += 1.0;
    joint[static_cast<std::size_t>(da[i] * kb + db[i])] += 1.0;
  }
  const double ha = entropy(ca, n);
  const double hb = entropy(cb, n);
  if (ha == 0.0 || hb == 0.0) return 0.0;
  // A bijection between the labelings gives exactly 1.
  if (ka == kb) {
    int nonzero = 0;
    for (double c : joint)
      if (c > 0.0) ++nonzero;
    if (nonzero == ka) return 1.0;
  }
  double mi = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j) {
      const double c = joint[static_cast<std::size_t>(i * kb + j)];
      if (c > 0.0) mi += (c / n) * std::log(c * n / (ca[static_cast<std::size_t>(i)] * cb[static_cast<std::size_t>(j)]));
    }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

NmiReport nmi_report(const Eigen::MatrixXd& points, const std::vector<int>& labels, const NmiOptions& opts) {
  require(opts.repeats >= 1, "nmi: repeats must be at least 1");
  require(opts.k >= 1, "nmi: k must be at least 1");
  require(static_cast<std::size_t>(points.rows()) == labels.size(), "nmi: one label per point required");
  require(points.rows() >= opts.k, "nmi: only " + std::to_string(points.rows()) + " points for k = " +
                                       std::to_string(opts.k) + " clusters");
  NmiReport r;
  r.repeats = opts.repeats;
  r.k = opts.k;
  r.n_points = static_cast<int>(points.rows());
  r.scores.assign(static_cast<std::size_t>(opts.repeats), 0.0);
  parallel_for(r.scores.size(), opts.threads, [&](std::size_t rep) {
    const KMeansResult km = kmeans_cluster(points, opts.k, opts.max_iters, derive_seed(opts.seed, rep));
    r.scores[rep] = nmi_score(km.labels, labels);
  });
  for (double s : r.scores) r.mean += s;
  r.mean /= opts.repeats;
  for (double s : r.scores) r.std += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(r.std / opts.repeats);
  return r;
}

NmiSelection select_hub_embeddings(const DenoiserParams& params, const HeteroGraph& g,
                                   const std::map<std::string, std::string>& categories, int top_n) {
  require(top_n >= 0, "nmi: top_n must be non-negative");
  require(params.config.n_nodes_total == static_cast<int>(g.nodes().size()),
          "nmi: checkpoint embeds " + std::to_string(params.config.n_nodes_total) + " nodes but the graph has " +
              std::to_string(g.nodes().size()));
  std::vector<int> hubs = hub_partition(g).hubs;
  if (top_n > 0 && top_n < static_cast<int>(hubs.size())) {
    std::stable_sort(hubs.begin(), hubs.end(),
                     [&](int a, int b) { return g.neighbors(a).size() > g.neighbors(b).size(); });
    hubs.resize(static_cast<std::size_t>(top_n));
    std::sort(hubs.begin(), hubs.end());
  }
  NmiSelection sel;
  std::map<std::string, int> label_ids;
  const auto emb = params.tensor(params.layout->emb);
  sel.points.resize(static_cast<Eigen::Index>(hubs.size()), emb.rows());
  for (std::size_t r = 0; r < hubs.size(); ++r) {
    const Node& node = g.nodes()[static_cast<std::size_t>(hubs[r])];
    std::string category;
    if (auto it = categories.find(node.name); it != categories.end())
      category = it->second;
    else if (node.category)
      category = *node.category;
    else
      fail("nmi: no category for hub ingredient '" + node.name + "'");
    const auto [it, inserted] = label_ids.emplace(category, static_cast<int>(label_ids.size()));
    if (inserted) sel.label_names.push_back(category);
    sel.node_ids.push_back(node.id);
    sel.labels.push_back(it->second);
    sel.points.row(static_cast<Eigen::Index>(r)) = emb.col(node.id).transpose();
  }
  return sel;
}

NmiReport nmi_protocol(const DenoiserParams& params, const HeteroGraph& g,
                       const std::map<std::string, std::string>& categories, const NmiOptions& opts) {
  const NmiSelection sel = select_hub_embeddings(params, g, categories, opts.top_n);
  if (static_cast<int>(sel.node_ids.size()) < opts.k)
    fail("nmi: " + std::to_string(sel.node_ids.size()) + " hub ingredients is fewer than k = " + std::to_string(opts.k));
  return nmi_report(sel.points, sel.labels, opts);
}

std::string GeneralizationMatrix::to_tsv() const {
  std::string out = "Train Size";
  for (int m : test_sizes) out += "\tTest (" + std::to_string(m) + ")";
  out += '\n';
  for (std::size_t i = 0; i < train_sizes.size(); ++i) {
    out += std::to_string(train_sizes[i]);
    for (std::size_t j = 0; j < test_sizes.size(); ++j)
      out += '\t' + io::format_double(mse(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out += '\n';
  }
  return out;
}

bool same_schedule(const NoiseSchedule& a, const NoiseSchedule& b) {
  return a.T == b.T && a.beta_start == b.beta_start && a.beta_end == b.beta_end;
}

GeneralizationMatrix generalization_matrix(const std::vector<Checkpoint>& checkpoints,
                                           const std::vector<SubgraphDataset>& datasets, const NoiseSchedule& sched,
                                           int threads) {
  require(!checkpoints.empty(), "generalization: no checkpoints");
  require(!datasets.empty(), "generalization: no datasets");
  GeneralizationMatrix g;
  for (const auto& c : checkpoints) {
    if (!same_schedule(c.schedule, sched))
      fail("generalization: checkpoint trained with T=" + std::to_string(c.schedule.T) + ", beta " +
           io::format_double(c.schedule.beta_start) + ".." + io::format_double(c.schedule.beta_end) +
           " but the requested schedule is T=" + std::to_string(sched.T) + ", beta " +
           io::format_double(sched.beta_start) + ".." + io::format_double(sched.beta_end));
    g.train_sizes.push_back(c.meta.train_m);
  }
  for (const auto& d : datasets) {
    require(!d.validation.empty(), "generalization: dataset with m=" + std::to_string(d.m) + " has no validation split");
    g.test_sizes.push_back(d.m);
  }
  g.mse.resize(static_cast<Eigen::Index>(checkpoints.size()), static_cast<Eigen::Index>(datasets.size()));
  for (std::size_t i = 0; i < checkpoints.size(); ++i)
    for (std::size_t j = 0; j < datasets.size(); ++j) {
      for (const auto& sg : datasets[j].validation)
        for (int id : sg.node_ids)
          require(id < checkpoints[i].params.config.n_nodes_total,
                  "generalization: dataset node " + std::to_string(id) + " is outside the checkpoint's embedding table");
      g.mse(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          evaluate_mse(checkpoints[i].params, datasets[j].validation, sched, validation_noise_seed(datasets[j]), threads);
    }
  return g;
}

Eigen::MatrixXd project_2d(const Eigen::MatrixXd& points) {
  require(points.rows() >= 2, "project_2d: need at least 2 vectors");
  const Eigen::Index n = points.rows();
  const Eigen::MatrixXd centered = points.rowwise() - points.colwise().mean();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, 2);
  if (centered.cwiseAbs().maxCoeff() == 0.0) return out;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index dim = cov.rows();
  for (Eigen::Index a = 0; a < std::min<Eigen::Index>(2, dim); ++a) {
    Eigen::VectorXd axis = es.eigenvectors().col(dim - 1 - a);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0.0) axis = -axis;
    out.col(a) = centered * axis;
  }
  return out;
}

}  // namespace edgediff
