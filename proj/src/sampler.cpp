#include "edgediff/sampler.hpp"

#include <utility>

#include "edgediff/error.hpp"
#include "edgediff/ingest.hpp"
#include "edgediff/parallel.hpp"
#include "edgediff/text_io.hpp"

namespace edgediff {

namespace {

constexpr std::uint64_t kValidationStream = std::uint64_t{1} << 40;

void draw_without_replacement(std::vector<int> pool, int k, Rng& rng, std::vector<int>& out) {
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
}

std::string ids_rows(const std::vector<Subgraph>& split) {
  std::string out;
  for (const auto& sg : split) {
    for (std::size_t i = 0; i < sg.node_ids.size(); ++i) {
      if (i) out += '\t';
      out += std::to_string(sg.node_ids[i]);
    }
    out += '\n';
  }
  return out;
}

std::string x0_block(const std::vector<Subgraph>& split) {
  std::string out;
  std::vector<double> row_major;
  for (const auto& sg : split) {
    const int m = sg.size();
    row_major.resize(static_cast<std::size_t>(m * m));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) row_major[static_cast<std::size_t>(i * m + j)] = sg.x0(i, j);
    io::append_f64_le(out, row_major);
  }
  return out;
}

std::vector<Subgraph> read_split(const std::filesystem::path& ids_path, const std::filesystem::path& bin_path,
                                 int m, long long count) {
  const auto lines = io::read_lines(ids_path);
  require(static_cast<long long>(lines.size()) == count,
          ids_path.string() + ": expected " + std::to_string(count) + " rows, found " + std::to_string(lines.size()));
  const std::string bytes = io::read_file(bin_path);
  const auto per = static_cast<std::size_t>(m * m);
  const auto values = io::read_f64_le(bytes, per * static_cast<std::size_t>(count), bin_path.string());
  std::vector<Subgraph> out(static_cast<std::size_t>(count));
  for (std::size_t s = 0; s < out.size(); ++s) {
    const auto fields = io::split_tabs(lines[s]);
    const std::string where = ids_path.string() + ":" + std::to_string(s + 1);
    require(static_cast<int>(fields.size()) == m, where + ": expected " + std::to_string(m) + " ids");
    for (auto f : fields) out[s].node_ids.push_back(static_cast<int>(io::parse_int(f, where)));
    out[s].x0.resize(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) out[s].x0(i, j) = values[s * per + static_cast<std::size_t>(i * m + j)];
    for (int i = 0; i < m; ++i) {
      require(out[s].x0(i, i) == 0.0, where + ": x0 diagonal must be zero");
      for (int j = i + 1; j < m; ++j) {
        const double w = out[s].x0(i, j);
        require(w == out[s].x0(j, i) && w >= 0.0 && w <= 1.0, where + ": x0 must be symmetric with entries in [0,1]");
      }
    }
  }
  return out;
}

}  // namespace

Subgraph subgraph_from_ids(const HeteroGraph& g, std::vector<int> node_ids) {
  const int m = static_cast<int>(node_ids.size());
  for (int id : node_ids) {
    require(id >= 0 && id < g.size(), "subgraph node id " + std::to_string(id) + " is not in the graph");
    require(is_ingredient(g.node(id).kind), "subgraph node '" + g.node(id).name + "' is not an ingredient");
  }
  Subgraph sg{std::move(node_ids), Eigen::MatrixXd::Zero(m, m)};
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      require(sg.node_ids[static_cast<std::size_t>(i)] != sg.node_ids[static_cast<std::size_t>(j)],
              "subgraph node ids must be distinct");
      const double w = g.weight(sg.node_ids[static_cast<std::size_t>(i)], sg.node_ids[static_cast<std::size_t>(j)]);
      sg.x0(i, j) = w;
      sg.x0(j, i) = w;
    }
  return sg;
}

Subgraph sample_balanced_subgraph(const HeteroGraph& g, int m, Rng& rng) {
  return sample_balanced_subgraph(g, hub_partition(g), m, rng);
}

Subgraph sample_balanced_subgraph(const HeteroGraph& g, const HubPartition& part, int m, Rng& rng) {
  require(m >= 2, "subgraph size must be at least 2");
  const int n_hubs = hub_slots(m);
  const int n_non = m - n_hubs;
  require(static_cast<int>(part.hubs.size()) >= n_hubs,
          "not enough hub ingredients: need " + std::to_string(n_hubs) + ", graph has " +
              std::to_string(part.hubs.size()));
  require(static_cast<int>(part.non_hubs.size()) >= n_non,
          "not enough non-hub ingredients: need " + std::to_string(n_non) + ", graph has " +
              std::to_string(part.non_hubs.size()));
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(m));
  draw_without_replacement(part.hubs, n_hubs, rng, ids);
  draw_without_replacement(part.non_hubs, n_non, rng, ids);
  return subgraph_from_ids(g, std::move(ids));
}

void validate_dataset_config(int m, long long n_train, long long n_val) {
  require(m >= 2, "subgraph size must be at least 2");
  require(n_train >= 1 && n_val >= 1, "dataset split sizes must be at least 1");
}

SubgraphDataset build_dataset(const HeteroGraph& g, int m, int n_train, int n_val, std::uint64_t seed,
                              int threads) {
  validate_dataset_config(m, n_train, n_val);
  const HubPartition part = hub_partition(g);
  SubgraphDataset ds;
  ds.m = m;
  ds.seed = seed;
  ds.graph_hash = graph_hash(g);
  ds.train.resize(static_cast<std::size_t>(n_train));
  ds.validation.resize(static_cast<std::size_t>(n_val));
  const std::size_t total = ds.train.size() + ds.validation.size();
  parallel_for(total, threads, [&](std::size_t k) {
    const bool is_train = k < ds.train.size();
    const std::uint64_t stream = is_train ? k : kValidationStream + (k - ds.train.size());
    Rng rng(derive_seed(seed, stream));
    Subgraph sg = sample_balanced_subgraph(g, part, m, rng);
    (is_train ? ds.train[k] : ds.validation[k - ds.train.size()]) = std::move(sg);
  });
  return ds;
}

void write_dataset(const SubgraphDataset& ds, const std::filesystem::path& dir) {
  io::ensure_dir(dir);
  io::atomic_write(dir / "train_ids.tsv", ids_rows(ds.train));
  io::atomic_write(dir / "val_ids.tsv", ids_rows(ds.validation));
  io::atomic_write(dir / "train_x0.bin", x0_block(ds.train));
  io::atomic_write(dir / "val_x0.bin", x0_block(ds.validation));
  io::Manifest m;
  m.set("format", "edgediff-dataset");
  m.set("version", "1");
  m.set("m", std::to_string(ds.m));
  m.set("n_train", std::to_string(ds.train.size()));
  m.set("n_val", std::to_string(ds.validation.size()));
  m.set("seed", std::to_string(ds.seed));
  m.set("graph_hash", io::hex64(ds.graph_hash));
  m.set("x0_encoding", "f64le-row-major");
  io::atomic_write(dir / "manifest.txt", m.serialize());
}

SubgraphDataset read_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.txt";
  const auto m = io::Manifest::parse(io::read_file(mpath), mpath.string());
  require(m.get("format") == "edgediff-dataset", mpath.string() + ": not a dataset manifest");
  require(m.get("version") == "1", mpath.string() + ": unsupported dataset version '" + m.get("version") + "'");
  SubgraphDataset ds;
  ds.m = static_cast<int>(m.get_int("m"));
  ds.seed = static_cast<std::uint64_t>(std::stoull(m.get("seed")));
  ds.graph_hash = static_cast<std::uint64_t>(std::stoull(m.get("graph_hash"), nullptr, 16));
  ds.train = read_split(dir / "train_ids.tsv", dir / "train_x0.bin", ds.m, m.get_int("n_train"));
  ds.validation = read_split(dir / "val_ids.tsv", dir / "val_x0.bin", ds.m, m.get_int("n_val"));
  return ds;
}

}  // namespace edgediff
