#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "architectures.hpp"
#include "volbench/error.hpp"
#include "volbench/neural.hpp"

namespace volbench {

namespace {

struct KindName {
  ArchKind kind;
  std::string_view id;
  std::string_view display;
};

constexpr KindName kKindNames[] = {
    {ArchKind::tcn, "tcn", "TCN"},           {ArchKind::dilated_rnn, "dilated_rnn", "DilatedRNN"},
    {ArchKind::indrnn, "indrnn", "IndRNN"},  {ArchKind::qrnn, "qrnn", "QRNN"},
    {ArchKind::skiprnn, "skiprnn", "SkipRNN"}, {ArchKind::rhn, "rhn", "RHN"},
    {ArchKind::hmrnn, "hmrnn", "HM-RNN"},    {ArchKind::fsrnn, "fsrnn", "FS-RNN"},
};

const KindName& lookup(ArchKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k;
  throw std::invalid_argument("unknown architecture");
}

std::size_t read_count(const nlohmann::json& j, const char* key) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw ConfigError(std::string("model field '") + key + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

std::string_view to_string(ArchKind kind) { return lookup(kind).id; }
std::string_view display_name(ArchKind kind) { return lookup(kind).display; }

std::optional<ArchKind> parse_arch_kind(std::string_view name) {
  for (const auto& k : kKindNames)
    if (k.id == name) return k.kind;
  return std::nullopt;
}

std::string_view to_string(BaseCellKind kind) { return kind == BaseCellKind::gru ? "gru" : "lstm"; }

std::optional<BaseCellKind> parse_base_cell(std::string_view name) {
  if (name == "gru") return BaseCellKind::gru;
  if (name == "lstm") return BaseCellKind::lstm;
  return std::nullopt;
}

CellConfig CellConfig::defaults(ArchKind kind) {
  CellConfig cfg;
  cfg.kind = kind;
  if (kind == ArchKind::qrnn) cfg.kernel_size = 2;
  if (kind == ArchKind::rhn) cfg.base_cell = BaseCellKind::lstm;
  return cfg;
}

void CellConfig::validate() const {
  const std::string name(to_string(kind));
  if (hidden_size < 1) throw ConfigError(name + ": hidden_size must be at least 1");
  if (num_layers < 1) throw ConfigError(name + ": num_layers must be at least 1");
  if (kind == ArchKind::tcn && kernel_size < 2) throw ConfigError(name + ": kernel_size must be at least 2");
  if (kernel_size < 1) throw ConfigError(name + ": kernel_size must be at least 1");
  if (dilation_base < 1) throw ConfigError(name + ": dilation_base must be at least 1");
  if (kind == ArchKind::rhn && recurrence_depth < 1) throw ConfigError(name + ": recurrence_depth must be at least 1");
  if (kind == ArchKind::fsrnn && fast_cells_k < 2) throw ConfigError(name + ": fast_cells_k must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(name + ": dropout must lie in [0, 1)");
}

std::string CellConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(kind));
  j["hidden_size"] = hidden_size;
  j["num_layers"] = num_layers;
  j["kernel_size"] = kernel_size;
  j["dilation_base"] = dilation_base;
  j["base_cell"] = std::string(to_string(base_cell));
  j["recurrence_depth"] = recurrence_depth;
  j["fast_cells_k"] = fast_cells_k;
  j["dropout"] = dropout;
  return j.dump();
}

CellConfig CellConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError("model config needs a string 'kind'");
  }
  const auto name = j["kind"].get<std::string>();
  auto kind = parse_arch_kind(name);
  if (!kind) throw ConfigError("unknown model kind '" + name + "'");
  CellConfig cfg = defaults(*kind);
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    if (key == "hidden_size") cfg.hidden_size = read_count(value, "hidden_size");
    else if (key == "num_layers") cfg.num_layers = read_count(value, "num_layers");
    else if (key == "kernel_size") cfg.kernel_size = read_count(value, "kernel_size");
    else if (key == "dilation_base") cfg.dilation_base = read_count(value, "dilation_base");
    else if (key == "recurrence_depth") cfg.recurrence_depth = read_count(value, "recurrence_depth");
    else if (key == "fast_cells_k") cfg.fast_cells_k = read_count(value, "fast_cells_k");
    else if (key == "dropout") {
      if (!value.is_number()) throw ConfigError("model field 'dropout' must be a number");
      cfg.dropout = value.get<double>();
    } else if (key == "base_cell") {
      auto cell = value.is_string() ? parse_base_cell(value.get<std::string>()) : std::nullopt;
      if (!cell) throw ConfigError("base_cell must be 'gru' or 'lstm'");
      cfg.base_cell = *cell;
    } else {
      throw ConfigError("unknown model field '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- parameters

std::size_t ParameterStore::add_normal(std::string name, Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = dist(rng);
  items_.push_back({std::move(name), std::move(t), std::nullopt});
  return items_.size() - 1;
}

std::size_t ParameterStore::add_uniform(std::string name, Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = dist(rng);
  items_.push_back({std::move(name), std::move(t), std::nullopt});
  return items_.size() - 1;
}

std::size_t ParameterStore::add_filled(std::string name, Shape shape, double value) {
  items_.push_back({std::move(name), Tensor::filled(std::move(shape), value, true), std::nullopt});
  return items_.size() - 1;
}

void ParameterStore::set_bounds(std::size_t index, double lo, double hi) { items_.at(index).bounds = {lo, hi}; }

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.emplace_back(p.value.shape(), std::vector<double>(p.value.values().begin(), p.value.values().end()));
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != items_.size()) throw std::invalid_argument("snapshot does not match parameter store");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (values[i].shape() != items_[i].value.shape()) {
      throw std::invalid_argument("snapshot shape mismatch for " + items_[i].name);
    }
    std::copy(values[i].values().begin(), values[i].values().end(), items_[i].value.values().begin());
  }
}

Bound bind_parameters(Tape& tape, ParameterStore& store) {
  Bound out;
  out.reserve(store.size());
  for (auto& p : store.items()) out.push_back(tape.watch(p.value));
  return out;
}

Bound bind_constants(Tape& tape, const ParameterStore& store) {
  Bound out;
  out.reserve(store.size());
  for (const auto& p : store.items()) {
    out.push_back(tape.constant(p.value.shape(), std::vector<double>(p.value.values().begin(), p.value.values().end())));
  }
  return out;
}

// ---------------------------------------------------------------- head

VolatilityHead::VolatilityHead(ParameterStore& store, std::size_t hidden_size, Initializer& init) {
  w1_ = store.add_normal("head.w1", {hidden_size, hidden_size}, init.stddev(hidden_size), init.rng);
  b1_ = store.add_filled("head.b1", {hidden_size}, 0.0);
  w2_ = store.add_normal("head.w2", {hidden_size, 1}, init.stddev(hidden_size), init.rng);
  // softplus(ln(e - 1)) = 1, so an untrained head predicts unit volatility.
  b2_ = store.add_filled("head.b2", {1}, std::log(std::exp(1.0) - 1.0));
}

Var VolatilityHead::forward(const Bound& p, const Var& h) const {
  const Shape s = h.shape();
  const std::size_t width = s.back();
  Var flat = s.size() == 2 ? h : reshape(h, {shape_size(s) / width, width});
  Var hidden = relu(add_bias(matmul(flat, p[w1_]), p[b1_]));
  Var sigma = add_scalar(softplus(add_bias(matmul(hidden, p[w2_]), p[b2_])), kSigmaFloor);
  Shape out = s;
  out.back() = 1;
  return reshape(sigma, std::move(out));
}

double VolatilityHead::sigma_from_output(double mlp_output) {
  const double sp = mlp_output > 30.0 ? mlp_output : std::log1p(std::exp(mlp_output));
  return sp + kSigmaFloor;
}

std::size_t VolatilityHead::parameter_count(std::size_t hidden_size) {
  return hidden_size * hidden_size + hidden_size + hidden_size + 1;
}

// ---------------------------------------------------------------- model

SequenceModel::SequenceModel(CellConfig cfg, std::uint64_t seed, InitScheme scheme) : cfg_(cfg) {
  cfg_.validate();
  Initializer init{scheme, std::mt19937_64(seed)};
  encoder_ = make_encoder(cfg_, store_, init);
  head_ = VolatilityHead(store_, cfg_.hidden_size, init);
}

Var SequenceModel::forward(Tape& tape, const Tensor& inputs, const StepContext& ctx) {
  return forward(tape, bind_parameters(tape, store_), inputs, ctx);
}

Var SequenceModel::forward(Tape& tape, const Bound& p, const Tensor& inputs, const StepContext& ctx) const {
  if (inputs.rank() != 3 || inputs.shape()[2] != 1) {
    throw std::invalid_argument("model inputs must be [T,B,1], got " + shape_to_string(inputs.shape()));
  }
  Var x = tape.constant(inputs);
  return head_.forward(p, encoder_->encode(p, x, ctx));
}

std::vector<double> SequenceModel::sigma_path(std::span<const double> x) const {
  if (x.empty()) return {};
  Tape tape(false);
  Bound p = bind_constants(tape, store_);
  Var sigma = forward(tape, p, lagged_inputs(x), StepContext{});
  auto v = sigma.values();
  return {v.begin(), v.end()};
}

Tensor lagged_inputs(std::span<const double> x) {
  Tensor t = Tensor::zeros({x.size(), 1, 1});
  for (std::size_t i = 1; i < x.size(); ++i) t[i] = x[i - 1];
  return t;
}

std::size_t expected_parameter_count(const CellConfig& cfg) {
  const std::size_t h = cfg.hidden_size;
  auto cell = [&](std::size_t in) { return RecurrentCell::parameter_count(cfg.base_cell, in, h); };
  auto in_of = [&](std::size_t l) { return l == 0 ? std::size_t{1} : h; };
  std::size_t n = VolatilityHead::parameter_count(h);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t in = in_of(l);
    switch (cfg.kind) {
      case ArchKind::tcn:
        n += cfg.kernel_size * in * h + h + h;
        if (in != h) n += in * h + h;
        break;
      case ArchKind::dilated_rnn:
      case ArchKind::skiprnn: n += cell(in); break;
      case ArchKind::indrnn: n += in * h + 2 * h; break;
      case ArchKind::qrnn: n += cfg.kernel_size * in * 3 * h + 3 * h; break;
      case ArchKind::rhn: n += 2 * in * h + cfg.recurrence_depth * (2 * h * h + 2 * h); break;
      case ArchKind::hmrnn: n += (in + h + (l + 1 < cfg.num_layers ? h : 0) + 1) * (4 * h + 1); break;
      case ArchKind::fsrnn: n += cell(in) + 2 * cell(h) + (cfg.fast_cells_k - 2) * cell(0); break;
    }
  }
  if (cfg.kind == ArchKind::skiprnn) n += h + 1;
  return n;
}

// ---------------------------------------------------------------- serialisation

namespace {

constexpr char kMagic[8] = {'V', 'O', 'L', 'M', 'D', 'L', '0', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated model file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, std::string_view s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_u64(in);
  if (n > (1u << 20)) throw DataError("corrupt model file: string too long");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated model file");
  return s;
}

}  // namespace

void save_model(std::ostream& out, const SequenceModel& model) {
  out.write(kMagic, sizeof kMagic);
  put_string(out, model.config().to_json());
  const auto& items = model.parameters().items();
  put_u64(out, items.size());
  for (const auto& p : items) {
    put_string(out, p.name);
    put_u64(out, p.value.rank());
    for (auto d : p.value.shape()) put_u64(out, d);
    for (double v : p.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed to write model file");
}

SequenceModel load_model(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError("not a model file");
  }
  SequenceModel model(CellConfig::from_json(get_string(in)), 0);
  auto& items = model.parameters().items();
  if (get_u64(in) != items.size()) throw DataError("model file parameter count does not match its config");
  for (auto& p : items) {
    if (get_string(in) != p.name) throw DataError("model file parameter order does not match " + p.name);
    Shape shape(get_u64(in));
    for (auto& d : shape) d = get_u64(in);
    if (shape != p.value.shape()) throw DataError("model file shape mismatch for " + p.name);
    for (auto& v : p.value.values()) v = std::bit_cast<double>(get_u64(in));
  }
  return model;
}

}  // namespace volbench
