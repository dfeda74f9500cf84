#include <cmath>

#include "edgediff/error.hpp"
#include "edgediff/text_io.hpp"
#include "edgediff/trainer.hpp"

namespace edgediff {

namespace {

constexpr const char* kFormat = "edgediff-checkpoint";
constexpr int kVersion = 1;

std::string curve_text(const std::vector<double>& c) { return io::join_doubles(c); }

std::vector<double> curve_parse(const std::string& s, const std::string& context) {
  if (s.empty()) return {};
  return io::split_doubles(s, context);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const DenoiserConfig& c = ckpt.params.config;
  const TrainingMeta& m = ckpt.meta;
  io::Manifest h;
  h.set("format", kFormat);
  h.set("version", std::to_string(kVersion));
  h.set("layers", std::to_string(c.layers));
  h.set("node_dim", std::to_string(c.node_dim));
  h.set("edge_dim", std::to_string(c.edge_dim));
  h.set("n_nodes_total", std::to_string(c.n_nodes_total));
  h.set("time_dim", std::to_string(c.time_dim));
  h.set("csp_bits", std::to_string(c.csp_bits));
  h.set("schedule.T", std::to_string(ckpt.schedule.T));
  h.set("schedule.beta_start", io::format_double(ckpt.schedule.beta_start));
  h.set("schedule.beta_end", io::format_double(ckpt.schedule.beta_end));
  h.set("seed", std::to_string(m.seed));
  h.set("epochs", std::to_string(m.epochs));
  h.set("steps", std::to_string(m.steps));
  h.set("batch_size", std::to_string(m.batch_size));
  h.set("train_m", std::to_string(m.train_m));
  h.set("csp_lambda", io::format_double(m.csp_lambda));
  h.set("train_curve", curve_text(m.train_curve));
  h.set("val_curve", curve_text(m.val_curve));
  h.set("final_val_mse", io::format_double(m.final_val_mse));
  h.set("val_noise_seed", std::to_string(m.val_noise_seed));
  h.set("graph_hash", io::hex64(m.graph_hash));
  h.set("diverged", m.diverged ? "1" : "0");
  std::string tensors;
  for (const auto& slot : ckpt.params.layout->slots()) {
    if (!tensors.empty()) tensors += ',';
    tensors += slot.name + ':' + std::to_string(slot.rows) + 'x' + std::to_string(slot.cols);
  }
  h.set("tensors", tensors);
  h.set("param_count", std::to_string(ckpt.params.values.size()));
  h.set("buffer_count", std::to_string(ckpt.params.buffers.size()));

  std::string out = h.serialize();
  out += '\n';
  io::append_f64_le(out, ckpt.params.values);
  io::append_f64_le(out, ckpt.params.buffers);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& context) {
  const auto split = bytes.find("\n\n");
  if (split == std::string_view::npos) fail(context + ": missing header terminator");
  const io::Manifest h = io::Manifest::parse(bytes.substr(0, split + 1), context);
  if (!h.has("format") || h.get("format") != kFormat) fail(context + ": not a checkpoint file");
  if (h.get_int("version") != kVersion)
    fail(context + ": unsupported checkpoint version " + h.get("version"));

  DenoiserConfig c;
  c.layers = static_cast<int>(h.get_int("layers"));
  c.node_dim = static_cast<int>(h.get_int("node_dim"));
  c.edge_dim = static_cast<int>(h.get_int("edge_dim"));
  c.n_nodes_total = static_cast<int>(h.get_int("n_nodes_total"));
  c.time_dim = static_cast<int>(h.get_int("time_dim"));
  c.csp_bits = static_cast<int>(h.get_int("csp_bits"));
  c.validate();

  Checkpoint ckpt{init_params(c, 0),
                  make_schedule(static_cast<int>(h.get_int("schedule.T")), h.get_double("schedule.beta_start"),
                                h.get_double("schedule.beta_end")),
                  {}};
  TrainingMeta& m = ckpt.meta;
  m.seed = std::stoull(h.get("seed"));
  m.epochs = static_cast<int>(h.get_int("epochs"));
  m.steps = h.get_int("steps");
  m.batch_size = static_cast<int>(h.get_int("batch_size"));
  m.train_m = static_cast<int>(h.get_int("train_m"));
  m.csp_lambda = h.get_double("csp_lambda");
  m.train_curve = curve_parse(h.get("train_curve"), context + ": train_curve");
  m.val_curve = curve_parse(h.get("val_curve"), context + ": val_curve");
  m.final_val_mse = h.get_double("final_val_mse");
  m.val_noise_seed = std::stoull(h.get("val_noise_seed"));
  m.graph_hash = std::stoull(h.get("graph_hash"), nullptr, 16);
  m.diverged = h.get_int("diverged") != 0;

  const auto n_params = static_cast<std::size_t>(h.get_int("param_count"));
  const auto n_buffers = static_cast<std::size_t>(h.get_int("buffer_count"));
  if (n_params != ckpt.params.values.size() || n_buffers != ckpt.params.buffers.size())
    fail(context + ": parameter count does not match the recorded architecture");
  const std::string_view payload = bytes.substr(split + 2);
  if (payload.size() != 8 * (n_params + n_buffers))
    fail(context + ": payload holds " + std::to_string(payload.size()) + " bytes, expected " +
         std::to_string(8 * (n_params + n_buffers)) + " (truncated?)");
  ckpt.params.values = io::read_f64_le(payload.substr(0, 8 * n_params), n_params, context);
  ckpt.params.buffers = io::read_f64_le(payload.substr(8 * n_params), n_buffers, context);
  for (double v : ckpt.params.values)
    if (!std::isfinite(v)) fail(context + ": non-finite parameter");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::atomic_write(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_file(path), path.string());
}

}  // namespace edgediff
