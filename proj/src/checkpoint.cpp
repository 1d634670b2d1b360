#include "carrnn/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace carrnn {

namespace {

class CheckpointError : public DataError {
 public:
  explicit CheckpointError(const std::string& what) : DataError("checkpoint: " + what) {}
};

std::string escape(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c <= 0x20 || c == '%' || c == ',' || c == '=' || c >= 0x7f) {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 0xf];
    } else {
      out += ch;
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() + 0 && i + 2 <= s.size() - 1) {
      out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

void write_block(std::ostringstream& os, std::string_view name, std::span<const double> values,
                 std::size_t rows, std::size_t cols) {
  os << "tensor " << name << ' ' << rows << ' ' << cols << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) os << ' ';
      os << format_double(values[r * cols + c]);
    }
    os << '\n';
  }
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Activations {
  Activation h = Activation::Identity, c = Activation::Tanh, g = Activation::Sigmoid,
             y = Activation::Identity;
  bool peepholes = true;
};

Activations activations_of(const CellParams& p) {
  return std::visit(overloaded{[](const RnnParams& r) {
                                 return Activations{r.act_h, Activation::Tanh, Activation::Sigmoid,
                                                    r.act_y, false};
                               },
                               [](const LstmParams& l) {
                                 return Activations{l.act_h, l.act_c, l.act_g, l.act_y,
                                                    l.peepholes};
                               },
                               [](const GruParams& g) {
                                 return Activations{g.act_h, Activation::Tanh, g.act_g, g.act_y,
                                                    false};
                               }},
                    p);
}

void apply_activations(CellParams& p, const Activations& a) {
  std::visit(overloaded{[&](RnnParams& r) {
                          r.act_h = a.h;
                          r.act_y = a.y;
                        },
                        [&](LstmParams& l) {
                          l.act_h = a.h;
                          l.act_c = a.c;
                          l.act_g = a.g;
                          l.act_y = a.y;
                          l.peepholes = a.peepholes;
                        },
                        [&](GruParams& g) {
                          g.act_h = a.h;
                          g.act_g = a.g;
                          g.act_y = a.y;
                        }},
             p);
}

}  // namespace

std::string serialize_tensors(const std::vector<ConstTensorRef>& tensors) {
  std::ostringstream os;
  for (const auto& t : tensors) write_block(os, t.name, t.values, t.rows, t.cols);
  return os.str();
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const CellShape shape = cell_shape(ckpt.net.cell);
  const Activations act = activations_of(ckpt.net.cell);
  std::ostringstream os;
  os << kCheckpointTag << ' ' << kCheckpointVersion << '\n';
  os << "meta cell=" << ckpt.kind.name() << " n_inputs=" << shape.inputs
     << " hidden=" << shape.hidden << " outputs=" << shape.outputs
     << " tau=" << format_double(cell_tau(ckpt.net.cell))
     << " tau_raw=" << format_double(ckpt.tau_raw) << " act_h=" << to_string(act.h)
     << " act_c=" << to_string(act.c) << " act_g=" << to_string(act.g)
     << " act_y=" << to_string(act.y) << " peepholes=" << (act.peepholes ? 1 : 0)
     << " fill=" << to_string(ckpt.fill) << " impute=" << (ckpt.impute ? 1 : 0)
     << " split_seed=" << ckpt.split.seed
     << " test_fraction=" << format_double(ckpt.split.test_fraction)
     << " val_fraction=" << format_double(ckpt.split.val_fraction) << " features=";
  for (std::size_t i = 0; i < ckpt.features.size(); ++i)
    os << (i ? "," : "") << escape(ckpt.features[i]);
  os << '\n';
  for (const auto& t : tensors(ckpt.net)) write_block(os, t.name, t.values, t.rows, t.cols);
  const Standardizer& st = ckpt.standardizer;
  write_block(os, "std_mean", st.mean.span(), st.mean.size(), 1);
  write_block(os, "std_scale", st.scale.span(), st.scale.size(), 1);
  const double iqr = st.time_iqr;
  write_block(os, "time_iqr", std::span<const double>(&iqr, 1), 1, 1);
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty file");
  {
    std::istringstream tag(line);
    std::string name;
    int version = 0;
    if (!(tag >> name >> version) || name != kCheckpointTag) throw CheckpointError("missing tag line");
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
  }
  if (!std::getline(in, line) || line.rfind("meta ", 0) != 0)
    throw CheckpointError("missing meta line");
  std::map<std::string, std::string> meta;
  {
    std::istringstream ms(line.substr(5));
    std::string kv;
    while (ms >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed meta entry '" + kv + "'");
      meta[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("meta key '" + key + "' missing");
    return it->second;
  };
  auto need_count = [&](const std::string& key) { return std::stoull(need(key)); };
  auto need_double = [&](const std::string& key) { return std::stod(need(key)); };

  Checkpoint ck;
  ck.kind = parse_model_kind(need("cell"));
  ck.fill = parse_fill_mode(need("fill"));
  ck.impute = need("impute") == "1";
  ck.tau_raw = need_double("tau_raw");
  ck.split.seed = need_count("split_seed");
  ck.split.test_fraction = need_double("test_fraction");
  ck.split.val_fraction = need_double("val_fraction");
  const std::string& features = need("features");
  std::size_t start = 0;
  while (start <= features.size() && !features.empty()) {
    const auto comma = features.find(',', start);
    ck.features.push_back(unescape(std::string_view(features).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }

  const CellShape shape{ck.kind.type, need_count("n_inputs"), need_count("hidden"),
                        need_count("outputs")};
  ck.net.cell = make_cell_params(shape, need_double("tau"));
  ck.net.imputer = UnivariateImputer::zeros(shape.outputs);
  apply_activations(ck.net.cell, {parse_activation(need("act_h")), parse_activation(need("act_c")),
                                  parse_activation(need("act_g")), parse_activation(need("act_y")),
                                  need("peepholes") == "1"});
  if (ck.features.size() != shape.outputs)
    throw CheckpointError("feature list does not match the output size");
  ck.standardizer.mean = Vector(shape.outputs);
  ck.standardizer.scale = Vector(shape.outputs);

  std::map<std::string, TensorRef> slots;
  for (TensorRef t : tensors(ck.net)) slots.emplace(std::string(t.name), t);
  slots.emplace("std_mean", TensorRef{"std_mean", ck.standardizer.mean.span(), shape.outputs, 1});
  slots.emplace("std_scale", TensorRef{"std_scale", ck.standardizer.scale.span(), shape.outputs, 1});
  slots.emplace("time_iqr",
                TensorRef{"time_iqr", std::span<double>(&ck.standardizer.time_iqr, 1), 1, 1});

  bool ended = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream hs(line);
    std::string kw, name;
    std::size_t rows = 0, cols = 0;
    if (!(hs >> kw >> name >> rows >> cols) || kw != "tensor")
      throw CheckpointError("malformed block header '" + line + "'");
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    TensorRef& slot = it->second;
    if (slot.rows != rows || slot.cols != cols)
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + std::to_string(slot.rows) +
                            "x" + std::to_string(slot.cols));
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::getline(in, line)) throw CheckpointError("tensor '" + name + "' truncated");
      std::istringstream rs(line);
      for (std::size_t c = 0; c < cols; ++c) {
        std::string tok;
        if (!(rs >> tok)) throw CheckpointError("tensor '" + name + "' row too short");
        slot.values[r * cols + c] = std::stod(tok);
      }
    }
    slots.erase(it);
  }
  if (!ended) throw CheckpointError("missing 'end' sentinel");
  if (!slots.empty()) throw CheckpointError("tensor '" + slots.begin()->first + "' missing");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << serialize_checkpoint(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace carrnn
