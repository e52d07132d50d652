#include "nmf/model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nmf {

KernelKind parse_kernel_kind(const std::string& name) {
  if (name == "exp") return KernelKind::Exp;
  if (name == "window") return KernelKind::Window;
  throw InvalidArgument("unknown kernel variant '" + name + "' (expected exp|window)");
}

std::string to_string(KernelKind kind) { return kind == KernelKind::Exp ? "exp" : "window"; }

std::string Block::name() const {
  switch (kind) {
    case BlockKind::Rates: return "A";
    case BlockKind::Weight: return "W" + std::to_string(index);
    case BlockKind::Bias: return "b" + std::to_string(index);
    case BlockKind::KernelB: return "B" + std::to_string(index);
    case BlockKind::KernelC: return "C" + std::to_string(index);
    case BlockKind::WindowLag: return "K" + std::to_string(index);
  }
  return "?";
}

ParameterLayout::ParameterLayout(ModelShape shape) : shape_(std::move(shape)) {
  const int n = shape_.n;
  if (n < 1) throw InvalidArgument("model needs at least one node");
  if (!(shape_.clamp_delta > 0.0 && shape_.clamp_delta < 0.5)) {
    throw InvalidArgument("clamp margin must lie in (0, 0.5)");
  }
  auto add = [&](BlockKind kind, int index, int rows, int cols) {
    blocks_.push_back({kind, index, size_, rows, cols});
    size_ += static_cast<std::size_t>(rows) * cols;
  };
  add(BlockKind::Rates, 0, n, n);
  weight_begin_ = blocks_.size();
  if (shape_.correction) {
    int in = shape_.correction_input();
    std::vector<int> widths = shape_.hidden;
    widths.push_back(n);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      if (widths[l] < 1) throw InvalidArgument("layer widths must be positive");
      add(BlockKind::Weight, static_cast<int>(l), widths[l], in);
      add(BlockKind::Bias, static_cast<int>(l), widths[l], 1);
      in = widths[l];
    }
    num_layers_ = static_cast<int>(widths.size());
  }
  kernel_begin_ = blocks_.size();
  if (shape_.kernel == KernelKind::Exp) {
    if (shape_.exp_terms < 1) throw InvalidArgument("exponential kernel needs L >= 1");
    for (int l = 0; l < shape_.exp_terms; ++l) {
      add(BlockKind::KernelB, l, n, n);
      add(BlockKind::KernelC, l, n, n);
    }
  } else {
    if (shape_.window < 0) throw InvalidArgument("window length must be >= 0");
    for (int s = 0; s <= shape_.window; ++s) add(BlockKind::WindowLag, s, n, 1);
  }
}

namespace {

std::vector<std::uint8_t> off_diagonal(int n) {
  std::vector<std::uint8_t> free(static_cast<std::size_t>(n) * n, 1);
  for (int i = 0; i < n; ++i) free[static_cast<std::size_t>(i) * n + i] = 0;
  return free;
}

}  // namespace

NmfParameters zero_parameters(const ModelShape& shape) {
  auto layout = std::make_shared<const ParameterLayout>(shape);
  NmfParameters p{layout, std::vector<double>(layout->size(), 0.0), off_diagonal(shape.n), false};
  return p;
}

void apply_support(NmfParameters& params, const DirectedNetwork& support) {
  const int n = params.shape().n;
  if (support.num_nodes() != n) throw InvalidArgument("support network has wrong node count");
  params.free_rates.assign(static_cast<std::size_t>(n) * n, 0);
  for (const Edge& e : support.edges()) {
    params.free_rates[static_cast<std::size_t>(e.dst) * n + e.src] = 1;
  }
  params.has_mask = true;
  project_rates(params);
}

NmfParameters initialize_parameters(const ModelShape& shape, Rng& rng,
                                    const std::optional<DirectedNetwork>& support,
                                    const InitOptions& options) {
  NmfParameters p = zero_parameters(shape);
  if (support) apply_support(p, *support);
  const ParameterLayout& layout = *p.layout;
  const int n = shape.n;
  {
    auto a = p.rates();
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double draw = rng.uniform(0.0, 0.1);
        if (p.free_rates[static_cast<std::size_t>(j) * n + i]) a(j, i) = draw;
      }
    }
  }
  for (int l = 0; l < layout.num_layers(); ++l) {
    const Block& w = layout.weight(l);
    const double r = std::sqrt(6.0 / (w.rows + w.cols));
    auto m = p.matrix(w);
    for (int row = 0; row < w.rows; ++row) {
      for (int col = 0; col < w.cols; ++col) m(row, col) = rng.uniform(-r, r);
    }
    if (options.zero_output_layer && l + 1 == layout.num_layers()) m.setZero();
  }
  if (shape.kernel == KernelKind::Exp) {
    for (int l = 0; l < shape.exp_terms; ++l) {
      p.matrix(layout.kernel_b(l)).diagonal().setConstant(0.1);
      p.matrix(layout.kernel_c(l)).diagonal().setConstant(0.5);
    }
  } else {
    p.vector(layout.lag(0)).setOnes();
  }
  return p;
}

Trajectory forward_exp_kernel(const NmfParameters& params, const NodeSet& source, int steps) {
  if (params.shape().kernel != KernelKind::Exp) throw InvalidArgument("model uses the window kernel");
  return forward_pass(params, source, steps);
}

Trajectory forward_window_kernel(const NmfParameters& params, const NodeSet& source, int steps) {
  if (params.shape().kernel != KernelKind::Window) throw InvalidArgument("model uses the exp kernel");
  return forward_pass(params, source, steps);
}

Trajectory forward(const NmfParameters& params, const NodeSet& source, int steps) {
  return forward_pass(params, source, steps);
}

Eigen::MatrixXd predicted_marginals(const NmfParameters& params, const NodeSet& source, int steps) {
  const Trajectory traj = forward_pass(params, source, steps, false);
  Eigen::MatrixXd out(steps, params.shape().n);
  for (int t = 1; t <= steps; ++t) out.row(t - 1) = traj.x(t).transpose();
  return out;
}

std::vector<double> estimate_influence(const NmfParameters& params, const NodeSet& source,
                                       int steps) {
  const Trajectory traj = forward_pass(params, source, steps, false);
  std::vector<double> sigma(steps);
  for (int t = 1; t <= steps; ++t) sigma[t - 1] = traj.x(t).sum();
  return sigma;
}

// ---------------------------------------------------------------------------

namespace {

void write_array(std::ostringstream& out, const double* data, std::size_t count) {
  out << '[';
  for (std::size_t k = 0; k < count; ++k) {
    if (k) out << ',';
    out << format_double(data[k]);
  }
  out << ']';
}

std::vector<double> read_array(const nlohmann::json& j, std::size_t expected, const std::string& what) {
  if (!j.is_array() || j.size() != expected) {
    throw ParseError("checkpoint array '" + what + "' must have " + std::to_string(expected) +
                     " entries");
  }
  std::vector<double> v;
  v.reserve(expected);
  for (const auto& e : j) {
    if (!e.is_number()) throw ParseError("checkpoint array '" + what + "' has a non-number");
    v.push_back(e.get<double>());
  }
  return v;
}

}  // namespace

std::string format_checkpoint(const Checkpoint& ckpt) {
  const NmfParameters& p = ckpt.params;
  const ModelShape& s = p.shape();
  const ParameterLayout& layout = *p.layout;
  std::ostringstream out;
  out << "{\n  \"version\": 1,\n  \"n\": " << s.n << ",\n  \"variant\": \"" << to_string(s.kernel)
      << "\",\n";
  if (s.kernel == KernelKind::Exp) {
    out << "  \"L\": " << s.exp_terms << ",\n";
  } else {
    out << "  \"tau\": " << s.window << ",\n";
  }
  out << "  \"layer_sizes\": [";
  for (std::size_t k = 0; k < s.hidden.size(); ++k) out << (k ? "," : "") << s.hidden[k];
  out << "],\n  \"correction\": " << (s.correction ? "true" : "false")
      << ",\n  \"clamp_delta\": " << format_double(s.clamp_delta) << ",\n  \"arrays\": {\n    \"A\": ";
  const Block& a = layout.rates();
  write_array(out, p.values.data() + a.offset, a.size());
  out << ",\n    \"eta\": [";
  for (int l = 0; l < layout.num_layers(); ++l) {
    const Block& w = layout.weight(l);
    const Block& b = layout.bias(l);
    out << (l ? ",\n      " : "\n      ") << "{\"W\": ";
    write_array(out, p.values.data() + w.offset, w.size());
    out << ", \"b\": ";
    write_array(out, p.values.data() + b.offset, b.size());
    out << '}';
  }
  out << (layout.num_layers() ? "\n    ]" : "]");
  if (s.kernel == KernelKind::Exp) {
    for (const char* which : {"B", "C"}) {
      out << ",\n    \"" << which << "\": [";
      for (int l = 0; l < s.exp_terms; ++l) {
        const Block& blk = which[0] == 'B' ? layout.kernel_b(l) : layout.kernel_c(l);
        if (l) out << ',';
        write_array(out, p.values.data() + blk.offset, blk.size());
      }
      out << ']';
    }
  } else {
    out << ",\n    \"K\": [";
    for (int lag = 0; lag <= s.window; ++lag) {
      const Block& blk = layout.lag(lag);
      if (lag) out << ',';
      write_array(out, p.values.data() + blk.offset, blk.size());
    }
    out << ']';
  }
  if (p.has_mask) {
    out << ",\n    \"mask\": [";
    for (std::size_t k = 0; k < p.free_rates.size(); ++k) out << (k ? "," : "") << int(p.free_rates[k]);
    out << ']';
  }
  out << "\n  },\n  \"training_meta\": {\"seed\": " << ckpt.meta.seed
      << ", \"epochs\": " << ckpt.meta.epochs
      << ", \"final_val_mae\": " << format_double(ckpt.meta.final_val_mae)
      << ", \"horizon\": " << ckpt.meta.horizon << "}\n}\n";
  return out.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported checkpoint version");
    ModelShape s;
    s.n = j.at("n").get<int>();
    s.kernel = parse_kernel_kind(j.at("variant").get<std::string>());
    if (s.kernel == KernelKind::Exp) {
      s.exp_terms = j.at("L").get<int>();
    } else {
      s.window = j.at("tau").get<int>();
    }
    s.hidden = j.at("layer_sizes").get<std::vector<int>>();
    s.correction = j.value("correction", true);
    s.clamp_delta = j.at("clamp_delta").get<double>();
    Checkpoint ckpt{zero_parameters(s), {}};
    NmfParameters& p = ckpt.params;
    const ParameterLayout& layout = *p.layout;
    const auto& arrays = j.at("arrays");
    auto fill = [&](const Block& b, const nlohmann::json& src, const std::string& what) {
      const auto v = read_array(src, b.size(), what);
      std::copy(v.begin(), v.end(), p.values.begin() + static_cast<std::ptrdiff_t>(b.offset));
    };
    fill(layout.rates(), arrays.at("A"), "A");
    const auto& eta = arrays.at("eta");
    if (!eta.is_array() || static_cast<int>(eta.size()) != layout.num_layers()) {
      throw ParseError("checkpoint eta has wrong layer count");
    }
    for (int l = 0; l < layout.num_layers(); ++l) {
      fill(layout.weight(l), eta[l].at("W"), "W" + std::to_string(l));
      fill(layout.bias(l), eta[l].at("b"), "b" + std::to_string(l));
    }
    if (s.kernel == KernelKind::Exp) {
      for (int l = 0; l < s.exp_terms; ++l) {
        fill(layout.kernel_b(l), arrays.at("B").at(l), "B");
        fill(layout.kernel_c(l), arrays.at("C").at(l), "C");
      }
    } else {
      for (int lag = 0; lag <= s.window; ++lag) fill(layout.lag(lag), arrays.at("K").at(lag), "K");
    }
    if (arrays.contains("mask")) {
      const auto m = read_array(arrays.at("mask"), p.free_rates.size(), "mask");
      for (std::size_t k = 0; k < m.size(); ++k) p.free_rates[k] = m[k] != 0.0 ? 1 : 0;
      for (int i = 0; i < s.n; ++i) p.free_rates[static_cast<std::size_t>(i) * s.n + i] = 0;
      p.has_mask = true;
    }
    for (double v : p.values) {
      if (!std::isfinite(v)) throw ParseError("checkpoint contains non-finite parameters");
    }
    const auto& meta = j.at("training_meta");
    ckpt.meta.seed = meta.value("seed", std::uint64_t{0});
    ckpt.meta.epochs = meta.value("epochs", 0);
    ckpt.meta.final_val_mae = meta.value("final_val_mae", 0.0);
    ckpt.meta.horizon = meta.value("horizon", 10);
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << format_checkpoint(ckpt);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace nmf
