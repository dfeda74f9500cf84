#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "edgediff/csp.hpp"
#include "edgediff/error.hpp"
#include "edgediff/eval.hpp"
#include "edgediff/ingest.hpp"
#include "edgediff/rng.hpp"
#include "edgediff/sampler.hpp"
#include "edgediff/text_io.hpp"
#include "edgediff/trainer.hpp"
#include "json.hpp"

namespace edgediff::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifestName = "run_manifest.txt";

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (const auto& item : out) require(!item.empty(), "empty entry in list '" + s + "'");
  return out;
}

std::string matrix_tsv(const Eigen::MatrixXd& x) {
  std::string out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out += '\t';
      out += io::format_double(x(i, j));
    }
    out += '\n';
  }
  return out;
}

// Content hash of a file, or of every regular file under a directory in
// name order (run manifests excluded).
std::uint64_t hash_input(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(p))
      if (entry.is_regular_file() && entry.path().filename() != kManifestName) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = io::fnv1a64("");
    for (const auto& f : files) {
      h = io::fnv1a64(f.filename().string(), h);
      h = io::fnv1a64(io::read_file(f), h);
    }
    return h;
  }
  return io::fnv1a64(io::read_file(p));
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool json = false;
  int threads = 1;
  std::uint64_t seed = 0;
};

class Command {
 public:
  Command(CLI::App* app, std::string name) : app_(app), name_(std::move(name)) {}

  CLI::App* app() const { return app_; }
  const std::string& name() const { return name_; }

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const std::string& rel) { outputs_.push_back(rel); }

  // Every option of the subcommand, given or defaulted, in declaration order.
  void write_manifest(const fs::path& dir, const Context& ctx, double seconds) const {
    io::Manifest m;
    m.set("command", name_);
    for (const CLI::Option* opt : app_->get_options()) {
      const std::string key = opt->get_lnames().empty() ? "" : opt->get_lnames().front();
      if (key.empty() || key == "help") continue;
      const bool is_flag = key == "json" || key == "trace" || key == "hubs-only";
      std::string value;
      if (is_flag) {
        value = opt->count() > 0 ? "true" : "false";
      } else if (opt->count() > 0) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      } else {
        value = opt->get_default_str();
      }
      m.set("flag." + key, value);
    }
    m.set("seed", std::to_string(ctx.seed));
    for (const auto& p : inputs_) m.set("input." + p.string(), io::hex64(hash_input(p)));
    for (std::size_t i = 0; i < outputs_.size(); ++i) m.set("output." + std::to_string(i), outputs_[i]);
    std::ostringstream wall;
    wall.precision(3);
    wall << std::fixed << seconds;
    m.set("wall_time_seconds", wall.str());
    io::atomic_write(dir / kManifestName, m.serialize());
  }

 private:
  CLI::App* app_;
  std::string name_;
  std::vector<fs::path> inputs_;
  std::vector<std::string> outputs_;
};

NoiseSchedule schedule_from(int T, double b0, double b1) { return make_schedule(T, b0, b1); }

void print_report(const Context& ctx, const ordered_json& j, const std::string& text) {
  if (ctx.json)
    ctx.out << j.dump(2) << '\n';
  else
    ctx.out << text;
}

std::string kv_text(const ordered_json& j) {
  std::string out;
  for (const auto& [k, v] : j.items()) {
    if (v.is_structured()) continue;
    out += k + "=";
    if (v.is_number_float())
      out += io::format_double(v.get<double>());
    else if (v.is_string())
      out += v.get<std::string>();
    else
      out += v.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string out;
  SynthConfig cfg;
};

void do_gen_synth(const GenSynthArgs& a, Context& ctx, Command& cmd) {
  SynthConfig cfg = a.cfg;
  cfg.seed = ctx.seed;
  const SynthCorpus corpus = generate_synthetic_corpus(cfg);
  write_synthetic_corpus(corpus, a.out);
  for (const char* f : {"recipes.tsv", "associations.tsv", "fingerprints.tsv", "categories.tsv"}) cmd.output(f);
  ordered_json j{{"recipes", (fs::path(a.out) / "recipes.tsv").string()},
                 {"associations", (fs::path(a.out) / "associations.tsv").string()},
                 {"fingerprints", (fs::path(a.out) / "fingerprints.tsv").string()},
                 {"categories", (fs::path(a.out) / "categories.tsv").string()}};
  print_report(ctx, j, kv_text(j));
}

struct BuildGraphArgs {
  std::string recipes, flavor, drug, categories, out;
  GraphBuildOptions opts;
};

void do_build_graph(const BuildGraphArgs& a, Context& ctx, Command& cmd) {
  const CorpusStats corpus = parse_recipe_corpus(a.recipes);
  cmd.input(a.recipes);
  const std::vector<Association> flavor = parse_associations(a.flavor);
  cmd.input(a.flavor);
  std::vector<Association> drug;
  if (!a.drug.empty()) {
    drug = parse_associations(a.drug);
    cmd.input(a.drug);
  }
  std::map<std::string, std::string> categories;
  if (!a.categories.empty()) {
    categories = parse_categories(a.categories);
    cmd.input(a.categories);
  }
  const HeteroGraph g = build_hetero_graph(corpus, flavor, drug, a.opts, categories);
  write_graph(g, a.out);
  for (const char* f : {"nodes.tsv", "edges.tsv", "manifest.txt"}) cmd.output(f);
  const HubPartition part = hub_partition(g);
  ordered_json j{{"nodes", g.size()},
                 {"edges", g.edges().size()},
                 {"hub_ingredients", part.hubs.size()},
                 {"nonhub_ingredients", part.non_hubs.size()},
                 {"ingredient_edges", g.meta().ingredient_edges},
                 {"compound_edges", g.meta().compound_edges},
                 {"duplicate_associations", g.meta().duplicate_associations},
                 {"skipped_recipes", g.meta().skipped_recipes},
                 {"graph_hash", io::hex64(graph_hash(g))}};
  print_report(ctx, j, kv_text(j));
}

struct SampleArgs {
  std::string graph, out;
  int m = 10;
  int n_train = 2000;
  int n_val = 64;
};

void do_sample(const SampleArgs& a, Context& ctx, Command& cmd) {
  validate_dataset_config(a.m, a.n_train, a.n_val);
  const HeteroGraph g = read_graph(a.graph);
  cmd.input(a.graph);
  const SubgraphDataset ds = build_dataset(g, a.m, a.n_train, a.n_val, ctx.seed, ctx.threads);
  write_dataset(ds, a.out);
  for (const char* f : {"manifest.txt", "train_ids.tsv", "val_ids.tsv", "train_x0.bin", "val_x0.bin"}) cmd.output(f);
  ordered_json j{{"m", ds.m},
                 {"train", ds.train.size()},
                 {"validation", ds.validation.size()},
                 {"hubs_per_subgraph", hub_slots(ds.m)},
                 {"graph_hash", io::hex64(ds.graph_hash)}};
  print_report(ctx, j, kv_text(j));
}

struct ModelArgs {
  int layers = 2;
  int node_dim = 64;
  int edge_dim = 64;
  int time_dim = 32;
};

struct ScheduleArgs {
  int T = 50;
  double beta_start = 1e-4;
  double beta_end = 0.05;
};

struct TrainArgs {
  std::string data, graph, fingerprints, out;
  ModelArgs model;
  ScheduleArgs sched;
  TrainConfig tc;
  double csp_lambda = 0.1;
};

void do_train(const TrainArgs& a, Context& ctx, Command& cmd) {
  const HeteroGraph g = read_graph(a.graph);
  cmd.input(a.graph);
  const SubgraphDataset ds = read_dataset(a.data);
  cmd.input(a.data);
  if (ds.graph_hash != graph_hash(g)) fail("dataset " + a.data + " was sampled from a different graph than " + a.graph);

  DenoiserConfig config;
  config.layers = a.model.layers;
  config.node_dim = a.model.node_dim;
  config.edge_dim = a.model.edge_dim;
  config.time_dim = a.model.time_dim;
  config.n_nodes_total = g.size();
  CspTargets targets;
  CspObjective csp;
  if (!a.fingerprints.empty()) {
    const auto fps = parse_fingerprints(a.fingerprints);
    cmd.input(a.fingerprints);
    targets = build_csp_targets(g, fps);
    config.csp_bits = kFingerprintBits;
    csp = {&targets, a.csp_lambda};
  }
  config.validate();
  const NoiseSchedule sched = schedule_from(a.sched.T, a.sched.beta_start, a.sched.beta_end);
  TrainConfig tc = a.tc;
  tc.seed = ctx.seed;
  tc.threads = ctx.threads;

  const Checkpoint ckpt = train(ds, config, sched, tc, csp);
  io::ensure_dir(a.out);
  save_checkpoint(ckpt, fs::path(a.out) / "checkpoint.bin");
  std::string curves = "epoch\ttrain_mse\tval_mse\n";
  for (std::size_t e = 0; e < ckpt.meta.train_curve.size(); ++e)
    curves += std::to_string(e + 1) + '\t' + io::format_double(ckpt.meta.train_curve[e]) + '\t' +
              io::format_double(ckpt.meta.val_curve[e]) + '\n';
  io::atomic_write(fs::path(a.out) / "curves.tsv", curves);
  cmd.output("checkpoint.bin");
  cmd.output("curves.tsv");

  ordered_json j{{"epochs", ckpt.meta.epochs},
                 {"steps", ckpt.meta.steps},
                 {"final_train_mse", ckpt.meta.train_curve.empty() ? 0.0 : ckpt.meta.train_curve.back()},
                 {"final_val_mse", ckpt.meta.final_val_mse},
                 {"csp_lambda", ckpt.meta.csp_lambda},
                 {"diverged", ckpt.meta.diverged},
                 {"checkpoint", (fs::path(a.out) / "checkpoint.bin").string()}};
  if (csp.active()) j["hubs_without_fingerprint"] = targets.hubs_without_fingerprint;
  print_report(ctx, j, kv_text(j));
  if (ckpt.meta.diverged) ctx.err << "warning: training diverged; the checkpoint holds the last finite state\n";
}

struct ReconstructArgs {
  std::string checkpoint, graph, data, nodes, out;
  int index = 0;
  int m = 25;
  int steps = 10;
  bool trace = false;
};

void do_reconstruct(const ReconstructArgs& a, Context& ctx, Command& cmd) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  cmd.input(a.checkpoint);
  const HeteroGraph g = read_graph(a.graph);
  cmd.input(a.graph);
  require(ckpt.params.config.n_nodes_total == g.size(), "checkpoint was trained on a graph with " +
                                                             std::to_string(ckpt.params.config.n_nodes_total) +
                                                             " nodes, but " + a.graph + " has " +
                                                             std::to_string(g.size()));
  Subgraph sg;
  if (!a.nodes.empty()) {
    std::vector<int> ids;
    for (const auto& name : split_list(a.nodes)) {
      const auto id = g.find(name);
      if (!id) fail("unknown node '" + name + "'");
      ids.push_back(*id);
    }
    sg = subgraph_from_ids(g, ids);
  } else if (!a.data.empty()) {
    const SubgraphDataset ds = read_dataset(a.data);
    cmd.input(a.data);
    require(a.index >= 0 && a.index < static_cast<int>(ds.validation.size()),
            "--index " + std::to_string(a.index) + " outside the " + std::to_string(ds.validation.size()) +
                " validation subgraphs");
    sg = ds.validation[static_cast<std::size_t>(a.index)];
  } else {
    Rng pick(derive_seed(ctx.seed, 1));
    sg = sample_balanced_subgraph(g, a.m, pick);
  }

  const auto& params = ckpt.params;
  const std::vector<int> ids = sg.node_ids;
  const NoisePredictor predictor = [&](const Eigen::MatrixXd& x, int t, std::size_t) {
    return predict_noise(x, t, ids, params, Mode::Eval);
  };
  const Reconstruction rec = reconstruct(sg.size(), predictor, ckpt.schedule, derive_seed(ctx.seed, 2), a.steps, a.trace);

  const fs::path out(a.out);
  io::ensure_dir(out);
  std::string nodes = "index\tid\tname\tkind\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Node& n = g.node(ids[i]);
    nodes += std::to_string(i) + '\t' + std::to_string(n.id) + '\t' + n.name + '\t' + std::string(to_string(n.kind)) + '\n';
  }
  io::atomic_write(out / "nodes.tsv", nodes);
  io::atomic_write(out / "final.tsv", matrix_tsv(rec.final_values));
  io::atomic_write(out / "ground_truth.tsv", matrix_tsv(sg.x0));
  cmd.output("nodes.tsv");
  cmd.output("final.tsv");
  cmd.output("ground_truth.tsv");
  if (a.trace) {
    for (std::size_t k = 0; k < rec.trace.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%03zu.tsv", k);
      io::atomic_write(out / name, matrix_tsv(clamp_unit(to_value_space(rec.trace[k]))));
      cmd.output(name);
    }
  }

  const Eigen::MatrixXd x0m = to_model_space(sg.x0);
  Rng noise(derive_seed(ctx.seed, 2));
  const Eigen::MatrixXd xT = symmetric_noise(sg.size(), noise);
  ordered_json j{{"m", sg.size()},
                 {"steps", a.steps},
                 {"T", ckpt.schedule.T},
                 {"initial_error", (xT - x0m).norm()},
                 {"final_error", (rec.final_model - x0m).norm()},
                 {"final_value_mse", upper_triangle_mse(rec.final_values, sg.x0)},
                 {"trace_matrices", a.trace ? rec.trace.size() : 0}};
  io::atomic_write(out / "summary.txt", kv_text(j));
  cmd.output("summary.txt");
  print_report(ctx, j, kv_text(j));
}

struct EvalNmiArgs {
  std::string checkpoint, graph, categories, out;
  NmiOptions opts;
};

void do_eval_nmi(const EvalNmiArgs& a, Context& ctx, Command& cmd) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  cmd.input(a.checkpoint);
  const HeteroGraph g = read_graph(a.graph);
  cmd.input(a.graph);
  std::map<std::string, std::string> categories;
  if (!a.categories.empty()) {
    categories = parse_categories(a.categories);
    cmd.input(a.categories);
  }
  NmiOptions opts = a.opts;
  opts.seed = ctx.seed;
  opts.threads = ctx.threads;
  const NmiReport r = nmi_protocol(ckpt.params, g, categories, opts);

  ordered_json j{{"nmi_mean", r.mean}, {"nmi_std", r.std}, {"repeats", r.repeats}, {"k", r.k}, {"hubs", r.n_points}};
  ordered_json scores = ordered_json::array();
  for (double s : r.scores) scores.push_back(s);
  j["scores"] = scores;
  ordered_json refs = ordered_json::array();
  std::string ref_text;
  for (const auto& ref : kReferenceNmi) {
    refs.push_back({{"model", ref.model}, {"nmi_mean", ref.mean}, {"nmi_std", ref.std}});
    ref_text += std::string("reference.") + ref.model + "=" + io::format_double(ref.mean) + " +- " +
                io::format_double(ref.std) + '\n';
  }
  j["reference"] = refs;
  const std::string text = kv_text(j) + ref_text;

  if (!a.out.empty()) {
    io::ensure_dir(a.out);
    io::atomic_write(fs::path(a.out) / "nmi.txt", text);
    io::atomic_write(fs::path(a.out) / "nmi.json", j.dump(2) + '\n');
    cmd.output("nmi.txt");
    cmd.output("nmi.json");
  }
  print_report(ctx, j, text);
}

struct EvalGenArgs {
  std::string checkpoints, data, out;
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
};

void do_eval_gen(const EvalGenArgs& a, Context& ctx, Command& cmd) {
  std::vector<Checkpoint> ckpts;
  for (const auto& p : split_list(a.checkpoints)) {
    ckpts.push_back(load_checkpoint(p));
    cmd.input(p);
  }
  std::vector<SubgraphDataset> datasets;
  for (const auto& p : split_list(a.data)) {
    datasets.push_back(read_dataset(p));
    cmd.input(p);
  }
  // Without an explicit request the first checkpoint's schedule is used.
  const NoiseSchedule sched = a.T > 0 ? schedule_from(a.T, a.beta_start, a.beta_end) : ckpts.front().schedule;
  const GeneralizationMatrix gm = generalization_matrix(ckpts, datasets, sched, ctx.threads);
  const std::string tsv = gm.to_tsv();

  ordered_json j{{"train_sizes", gm.train_sizes}, {"test_sizes", gm.test_sizes}};
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < gm.mse.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < gm.mse.cols(); ++c) row.push_back(gm.mse(i, c));
    rows.push_back(row);
  }
  j["mse"] = rows;
  if (!a.out.empty()) {
    io::ensure_dir(a.out);
    io::atomic_write(fs::path(a.out) / "generalization.tsv", tsv);
    io::atomic_write(fs::path(a.out) / "generalization.json", j.dump(2) + '\n');
    cmd.output("generalization.tsv");
    cmd.output("generalization.json");
  }
  print_report(ctx, j, tsv);
}

struct ExportArgs {
  std::string checkpoint, graph, out;
  bool hubs_only = false;
};

void do_export(const ExportArgs& a, Context& ctx, Command& cmd) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  cmd.input(a.checkpoint);
  const HeteroGraph g = read_graph(a.graph);
  cmd.input(a.graph);
  require(ckpt.params.config.n_nodes_total == g.size(), "checkpoint and graph disagree on the node count");
  std::vector<int> ids;
  for (const Node& n : g.nodes())
    if (a.hubs_only ? n.kind == NodeKind::HubIngredient : is_ingredient(n.kind)) ids.push_back(n.id);
  require(ids.size() >= 2, "export: fewer than 2 nodes selected");
  const auto emb = ckpt.params.tensor(ckpt.params.layout->emb);
  Eigen::MatrixXd points(static_cast<Eigen::Index>(ids.size()), emb.rows());
  for (std::size_t r = 0; r < ids.size(); ++r) points.row(static_cast<Eigen::Index>(r)) = emb.col(ids[r]).transpose();
  const Eigen::MatrixXd xy = project_2d(points);

  std::string table = "id\tname\tkind\tcategory";
  for (Eigen::Index c = 0; c < emb.rows(); ++c) table += "\te" + std::to_string(c);
  table += '\n';
  std::string proj = "id\tname\tkind\tcategory\tx\ty\n";
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const Node& n = g.node(ids[r]);
    const std::string head = std::to_string(n.id) + '\t' + n.name + '\t' + std::string(to_string(n.kind)) + '\t' +
                             n.category.value_or("");
    table += head;
    for (Eigen::Index c = 0; c < emb.rows(); ++c) table += '\t' + io::format_double(points(static_cast<Eigen::Index>(r), c));
    table += '\n';
    proj += head + '\t' + io::format_double(xy(static_cast<Eigen::Index>(r), 0)) + '\t' +
            io::format_double(xy(static_cast<Eigen::Index>(r), 1)) + '\n';
  }
  io::ensure_dir(a.out);
  io::atomic_write(fs::path(a.out) / "embeddings.tsv", table);
  io::atomic_write(fs::path(a.out) / "projection_2d.tsv", proj);
  cmd.output("embeddings.tsv");
  cmd.output("projection_2d.tsv");
  ordered_json j{{"nodes", ids.size()}, {"dim", emb.rows()}};
  print_report(ctx, j, kv_text(j));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Edge diffusion over ingredient graphs"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Context ctx{out, err};
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for all randomness");
    sub->add_option("--threads", ctx.threads, "Worker threads for deterministic parallel sections")
        ->check(CLI::Range(1, 1024));
    sub->add_flag("--json", ctx.json, "Print the report as JSON");
  };

  GenSynthArgs gen;
  auto* gen_app = app.add_subcommand("gen-synth", "Write a synthetic planted-category corpus");
  gen_app->add_option("--out", gen.out, "Output directory")->required();
  gen_app->add_option("--ingredients", gen.cfg.n_ingredients);
  gen_app->add_option("--compounds", gen.cfg.n_compounds);
  gen_app->add_option("--recipes", gen.cfg.n_recipes);
  gen_app->add_option("--categories", gen.cfg.n_categories);
  common(gen_app);

  BuildGraphArgs bg;
  auto* bg_app = app.add_subcommand("build-graph", "Build the heterogeneous graph from a corpus");
  bg_app->add_option("--recipes", bg.recipes, "Recipe file")->required();
  bg_app->add_option("--flavor", bg.flavor, "Flavor compound associations")->required();
  bg_app->add_option("--drug", bg.drug, "Drug compound associations");
  bg_app->add_option("--categories", bg.categories, "Ingredient categories");
  bg_app->add_option("--npmi-threshold", bg.opts.npmi_threshold);
  bg_app->add_option("--min-cooccur", bg.opts.min_cooccur);
  bg_app->add_option("--out", bg.out, "Graph directory")->required();
  common(bg_app);

  SampleArgs sa;
  auto* sa_app = app.add_subcommand("sample", "Sample balanced subgraph datasets");
  sa_app->add_option("--graph", sa.graph)->required();
  sa_app->add_option("--m", sa.m, "Subgraph size");
  sa_app->add_option("--train", sa.n_train, "Training subgraphs");
  sa_app->add_option("--val", sa.n_val, "Validation subgraphs");
  sa_app->add_option("--out", sa.out)->required();
  common(sa_app);

  auto schedule_flags = [](CLI::App* sub, ScheduleArgs& s) {
    sub->add_option("--T", s.T, "Diffusion steps");
    sub->add_option("--beta-start", s.beta_start);
    sub->add_option("--beta-end", s.beta_end);
  };

  TrainArgs tr;
  auto* tr_app = app.add_subcommand("train", "Train the noise predictor");
  tr_app->add_option("--data", tr.data, "Dataset directory")->required();
  tr_app->add_option("--graph", tr.graph, "Graph directory")->required();
  tr_app->add_option("--fingerprints", tr.fingerprints, "Fingerprint file; enables the fingerprint objective");
  tr_app->add_option("--csp-lambda", tr.csp_lambda, "Weight of the fingerprint objective");
  tr_app->add_option("--out", tr.out, "Run directory")->required();
  tr_app->add_option("--layers", tr.model.layers);
  tr_app->add_option("--node-dim", tr.model.node_dim);
  tr_app->add_option("--edge-dim", tr.model.edge_dim);
  tr_app->add_option("--time-dim", tr.model.time_dim);
  schedule_flags(tr_app, tr.sched);
  tr_app->add_option("--epochs", tr.tc.epochs);
  tr_app->add_option("--max-steps", tr.tc.max_steps, "Optimizer step cap (0 = none)");
  tr_app->add_option("--batch-size", tr.tc.batch_size);
  tr_app->add_option("--lr", tr.tc.adam.lr);
  tr_app->add_option("--adam-beta1", tr.tc.adam.beta1);
  tr_app->add_option("--adam-beta2", tr.tc.adam.beta2);
  tr_app->add_option("--adam-eps", tr.tc.adam.eps);
  tr_app->add_option("--norm-momentum", tr.tc.norm_momentum);
  common(tr_app);

  ReconstructArgs rc;
  auto* rc_app = app.add_subcommand("reconstruct", "DDIM reconstruction of one subgraph");
  rc_app->add_option("--checkpoint", rc.checkpoint)->required();
  rc_app->add_option("--graph", rc.graph)->required();
  rc_app->add_option("--nodes", rc.nodes, "Comma-separated ingredient names");
  rc_app->add_option("--data", rc.data, "Dataset whose validation subgraph --index is used");
  rc_app->add_option("--index", rc.index);
  rc_app->add_option("--m", rc.m, "Size of a freshly sampled subgraph when neither --nodes nor --data is given");
  rc_app->add_option("--steps", rc.steps, "DDIM steps");
  rc_app->add_flag("--trace", rc.trace, "Write every intermediate matrix");
  rc_app->add_option("--out", rc.out)->required();
  common(rc_app);

  auto* eval_app = app.add_subcommand("eval", "Evaluation protocols");
  eval_app->require_subcommand(1);
  EvalNmiArgs en;
  auto* en_app = eval_app->add_subcommand("nmi", "Cluster hub embeddings and score against categories");
  en_app->add_option("--checkpoint", en.checkpoint)->required();
  en_app->add_option("--graph", en.graph)->required();
  en_app->add_option("--categories", en.categories, "Category file (defaults to the graph's annotations)");
  en_app->add_option("--k", en.opts.k);
  en_app->add_option("--repeats", en.opts.repeats);
  en_app->add_option("--max-iters", en.opts.max_iters);
  en_app->add_option("--top-n", en.opts.top_n, "Keep the N highest-degree hubs (0 = all)");
  en_app->add_option("--out", en.out);
  common(en_app);

  EvalGenArgs eg;
  auto* eg_app = eval_app->add_subcommand("gen", "Cross-size validation MSE matrix");
  eg_app->add_option("--checkpoints", eg.checkpoints, "Comma-separated checkpoint files")->required();
  eg_app->add_option("--data", eg.data, "Comma-separated dataset directories")->required();
  eg_app->add_option("--T", eg.T, "Requested schedule (0 = the first checkpoint's)");
  eg_app->add_option("--beta-start", eg.beta_start);
  eg_app->add_option("--beta-end", eg.beta_end);
  eg_app->add_option("--out", eg.out);
  common(eg_app);

  ExportArgs ex;
  auto* ex_app = app.add_subcommand("export-emb", "Export embeddings and a 2-D projection");
  ex_app->add_option("--checkpoint", ex.checkpoint)->required();
  ex_app->add_option("--graph", ex.graph)->required();
  ex_app->add_flag("--hubs-only", ex.hubs_only);
  ex_app->add_option("--out", ex.out)->required();
  common(ex_app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) {
      out << sub->help();
      for (auto* subsub : sub->get_subcommands()) out << subsub->help();
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    CLI::App* target = &app;
    for (auto* sub : app.get_subcommands()) {
      target = sub;
      for (auto* subsub : sub->get_subcommands()) target = subsub;
    }
    err << target->help();
    return 1;
  }
  ctx.seed = seed;

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  try {
    if (gen_app->parsed()) {
      Command cmd(gen_app, "gen-synth");
      do_gen_synth(gen, ctx, cmd);
      cmd.write_manifest(gen.out, ctx, elapsed());
    } else if (bg_app->parsed()) {
      Command cmd(bg_app, "build-graph");
      do_build_graph(bg, ctx, cmd);
      cmd.write_manifest(bg.out, ctx, elapsed());
    } else if (sa_app->parsed()) {
      Command cmd(sa_app, "sample");
      do_sample(sa, ctx, cmd);
      cmd.write_manifest(sa.out, ctx, elapsed());
    } else if (tr_app->parsed()) {
      Command cmd(tr_app, "train");
      do_train(tr, ctx, cmd);
      cmd.write_manifest(tr.out, ctx, elapsed());
    } else if (rc_app->parsed()) {
      Command cmd(rc_app, "reconstruct");
      do_reconstruct(rc, ctx, cmd);
      cmd.write_manifest(rc.out, ctx, elapsed());
    } else if (en_app->parsed()) {
      Command cmd(en_app, "eval nmi");
      do_eval_nmi(en, ctx, cmd);
      if (!en.out.empty()) cmd.write_manifest(en.out, ctx, elapsed());
    } else if (eg_app->parsed()) {
      Command cmd(eg_app, "eval gen");
      do_eval_gen(eg, ctx, cmd);
      if (!eg.out.empty()) cmd.write_manifest(eg.out, ctx, elapsed());
    } else if (ex_app->parsed()) {
      Command cmd(ex_app, "export-emb");
      do_export(ex, ctx, cmd);
      cmd.write_manifest(ex.out, ctx, elapsed());
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Io ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace edgediff::cli
