#include "rockres/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "rockres/config.hpp"
#include "rockres/errors.hpp"
#include "rockres/rng.hpp"

namespace rockres {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
}

// ---- Adam ----

template <typename T>
Adam<T>::Adam(std::vector<NamedTensor<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.shape());
    v_.emplace_back(p.tensor.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step_size = static_cast<T>(lr_ / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const NDArray<T>& g = p.node()->grad;
    T* w = p.mutable_value().ptr();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    const std::int64_t n = p.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const T gj = g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

// ---- metrics ----

std::string to_csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + to_string(r.split) + "," + format_double(r.loss) + "," +
         format_double(r.top1_accuracy);
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : records) out += to_csv_row(r) + "\n";
  return out;
}

namespace {

void check_logits(const Shape& shape, std::size_t labels) {
  if (shape.size() != 2 || shape[0] != static_cast<std::int64_t>(labels)) {
    throw ShapeError("logits " + to_string(shape) + " do not match " + std::to_string(labels) + " labels");
  }
  if (labels == 0) throw ShapeError("metrics need at least one row");
}

}  // namespace

template <typename T>
std::int64_t top1_correct(const NDArray<T>& logits, std::span<const std::int32_t> labels) {
  check_logits(logits.shape(), labels.size());
  const std::int64_t k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.ptr() + static_cast<std::int64_t>(i) * k;
    // max_element returns the first maximum, which is the tie-break rule.
    const auto best = std::max_element(row, row + k) - row;
    if (best == labels[i]) ++correct;
  }
  return correct;
}

template <typename T>
double top1_accuracy(const NDArray<T>& logits, std::span<const std::int32_t> labels) {
  return static_cast<double>(top1_correct(logits, labels)) / static_cast<double>(labels.size());
}

template <typename T>
std::vector<double> per_sample_loss(const NDArray<T>& logits, std::span<const std::int32_t> labels) {
  check_logits(logits.shape(), labels.size());
  const std::int64_t k = logits.dim(1);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ConfigError("label out of range");
    const T* row = logits.ptr() + static_cast<std::int64_t>(i) * k;
    const double mx = static_cast<double>(*std::max_element(row, row + k));
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j]) - mx);
    out[i] = std::log(total) + mx - static_cast<double>(row[labels[i]]);
  }
  return out;
}

template std::int64_t top1_correct(const NDArray<float>&, std::span<const std::int32_t>);
template std::int64_t top1_correct(const NDArray<double>&, std::span<const std::int32_t>);
template double top1_accuracy(const NDArray<float>&, std::span<const std::int32_t>);
template double top1_accuracy(const NDArray<double>&, std::span<const std::int32_t>);
template std::vector<double> per_sample_loss(const NDArray<float>&, std::span<const std::int32_t>);
template std::vector<double> per_sample_loss(const NDArray<double>&, std::span<const std::int32_t>);

// ---- checkpoint ----

namespace {

constexpr char kMagic[4] = {'R', 'K', 'C', 'P'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t u = 0;
    std::memcpy(&u, &f, 4);
    le(u);
  }
  void tensor(const NamedArray& t) {
    if (t.name.size() > 0xffff) throw ConfigError("tensor name too long: " + t.name);
    if (t.value.rank() > 0xff) throw ConfigError("tensor rank too large: " + t.name);
    le(static_cast<std::uint16_t>(t.name.size()));
    bytes(t.name.data(), t.name.size());
    le(static_cast<std::uint8_t>(t.value.rank()));
    for (const auto d : t.value.shape()) le(static_cast<std::uint32_t>(d));
    for (const float f : t.value.data()) f32(f);
  }
  void section(const std::vector<NamedArray>& ts) {
    le(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) tensor(t);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw ConfigError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U le() {
    const std::uint8_t* p = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v = static_cast<U>(v | (static_cast<U>(p[i]) << (8 * i)));
    return v;
  }
  NamedArray tensor() {
    NamedArray t;
    const auto len = le<std::uint16_t>();
    const std::uint8_t* p = take(len);
    t.name.assign(reinterpret_cast<const char*>(p), len);
    const auto ndim = le<std::uint8_t>();
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < ndim; ++i) {
      shape.push_back(le<std::uint32_t>());
      count *= static_cast<std::uint64_t>(shape.back());
    }
    if (count * 4 > in_.size() - pos_) throw ConfigError("checkpoint tensor " + t.name + " truncated");
    std::vector<float> data(count);
    for (auto& f : data) {
      const auto u = le<std::uint32_t>();
      std::memcpy(&f, &u, 4);
    }
    t.value = NDArray<float>(std::move(shape), std::move(data));
    return t;
  }
  std::vector<NamedArray> section() {
    const auto n = le<std::uint32_t>();
    std::vector<NamedArray> out;
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(tensor());
    return out;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(kVersion);
  w.section(params);
  w.section(optimizer);
  w.section(state);
  w.le(static_cast<std::uint32_t>(config_text.size()));
  w.bytes(config_text.data(), config_text.size());
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(r.take(4), kMagic, 4) != 0) {
    throw ConfigError("not a checkpoint (bad magic)");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.params = r.section();
  c.optimizer = r.section();
  c.state = r.section();
  const auto len = r.le<std::uint32_t>();
  const std::uint8_t* p = r.take(len);
  c.config_text.assign(reinterpret_cast<const char*>(p), len);
  if (!r.done()) throw ConfigError("trailing bytes after checkpoint");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

const NDArray<float>& Checkpoint::find_state(const std::string& name) const {
  for (const auto& s : state) {
    if (s.name == name) return s.value;
  }
  throw ConfigError("checkpoint has no state tensor " + name);
}

ChannelStats Checkpoint::channel_stats() const {
  const auto& mean = find_state("data.channel_mean");
  const auto& stddev = find_state("data.channel_std");
  if (mean.numel() != 3 || stddev.numel() != 3) throw ConfigError("bad standardization constants");
  ChannelStats s;
  for (int c = 0; c < 3; ++c) {
    s.mean[static_cast<std::size_t>(c)] = mean[c];
    s.stddev[static_cast<std::size_t>(c)] = stddev[c];
  }
  return s;
}

ModelConfig Checkpoint::model_config() const { return parse_model_config(config_text); }
TrainConfig Checkpoint::train_config() const { return parse_train_config(config_text); }

Checkpoint make_checkpoint(Network<float>& model, const Adam<float>* optimizer,
                           const ChannelStats& stats, const TrainConfig& train_config) {
  Checkpoint c;
  for (const auto& p : model.parameters()) c.params.push_back({p.name, p.tensor.value()});
  if (optimizer != nullptr) {
    const auto& opt = *optimizer;
    c.optimizer.push_back(
        {"adam.step", NDArray<float>({1}, {static_cast<float>(opt.step_count())})});
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      c.optimizer.push_back({"adam.m." + opt.params()[i].name, opt.first_moments()[i]});
      c.optimizer.push_back({"adam.v." + opt.params()[i].name, opt.second_moments()[i]});
    }
  }
  for (const auto& b : model.buffers()) c.state.push_back({b.name, *b.buffer});
  c.state.push_back({"data.channel_mean",
                     NDArray<float>({3}, std::vector<float>(stats.mean.begin(), stats.mean.end()))});
  c.state.push_back({"data.channel_std",
                     NDArray<float>({3}, std::vector<float>(stats.stddev.begin(), stats.stddev.end()))});
  c.config_text = to_text(model.config()) + to_text(train_config);
  return c;
}

void load_into(Network<float>& model, const Checkpoint& ckpt) {
  const ModelConfig saved = ckpt.model_config();
  if (!(saved == model.config())) {
    throw ConfigError("checkpoint model configuration differs:\n" + to_text(saved) + "vs model\n" +
                      to_text(model.config()));
  }
  auto params = model.parameters();
  if (params.size() != ckpt.params.size()) throw ConfigError("checkpoint parameter count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.params[i];
    if (src.name != params[i].name || src.value.shape() != params[i].tensor.shape()) {
      throw ConfigError("checkpoint parameter " + src.name + " " + to_string(src.value.shape()) +
                        " does not match " + params[i].name + " " + to_string(params[i].tensor.shape()));
    }
    params[i].tensor.mutable_value() = src.value;
  }
  for (auto& b : model.buffers()) {
    const auto& src = ckpt.find_state(b.name);
    if (src.shape() != b.buffer->shape()) throw ConfigError("checkpoint buffer " + b.name + " shape differs");
    *b.buffer = src;
  }
}

void load_optimizer(Adam<float>& optimizer, const Checkpoint& ckpt) {
  auto find = [&](const std::string& name) -> const NDArray<float>& {
    for (const auto& t : ckpt.optimizer) {
      if (t.name == name) return t.value;
    }
    throw ConfigError("checkpoint has no optimizer tensor " + name);
  };
  optimizer.set_step_count(static_cast<std::int64_t>(find("adam.step")[0]));
  for (std::size_t i = 0; i < optimizer.params().size(); ++i) {
    const auto& name = optimizer.params()[i].name;
    optimizer.first_moments()[i] = find("adam.m." + name);
    optimizer.second_moments()[i] = find("adam.v." + name);
  }
}

// ---- training ----

namespace {

class NumericsScope {
 public:
  explicit NumericsScope(bool on) : previous_(check_numerics_enabled()) { set_check_numerics(on); }
  ~NumericsScope() { set_check_numerics(previous_); }
  NumericsScope(const NumericsScope&) = delete;
  NumericsScope& operator=(const NumericsScope&) = delete;

 private:
  bool previous_;
};

std::uint64_t shuffle_seed(const TrainConfig& config, std::uint64_t data_seed) {
  return mix_keys(config.seed, data_seed);
}

void check_classes(const Network<float>& model, const DatasetIndex& split) {
  if (split.num_classes() != model.config().num_classes) {
    throw ConfigError("dataset has " + std::to_string(split.num_classes()) + " classes but the model expects " +
                      std::to_string(model.config().num_classes));
  }
}

}  // namespace

MetricsRecord evaluate_split(Network<float>& model, const DatasetIndex& split, const ChannelStats& stats,
                             std::int64_t batch_size, int epoch) {
  check_classes(model, split);
  if (split.size() == 0) throw ConfigError("cannot evaluate an empty split");
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const BatchSequence seq(split, static_cast<std::size_t>(batch_size), 0, 0, stats, cfg.input_height,
                          cfg.input_width);
  double loss_total = 0.0;
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < seq.size(); ++b) {
    const Batch batch = seq.load(b);
    const Tensor<float> logits = model.forward(batch.images, Mode::eval);
    for (const double l : per_sample_loss(logits.value(), batch.labels)) loss_total += l;
    correct += top1_correct(logits.value(), batch.labels);
  }
  const auto n = static_cast<double>(split.size());
  return {epoch, split.split, loss_total / n, static_cast<double>(correct) / n};
}

MetricsRecord evaluate(Network<float>& model, const Checkpoint& ckpt, const DatasetIndex& split,
                       std::int64_t batch_size) {
  load_into(model, ckpt);
  return evaluate_split(model, split, ckpt.channel_stats(), batch_size, 0);
}

TrainResult train(Network<float>& model, const Dataset& data, const TrainConfig& config,
                  std::uint64_t data_seed, const EpochCallback& on_record) {
  config.validate();
  check_classes(model, data.train);
  check_classes(model, data.test);
  if (data.train.size() == 0 || data.test.size() == 0) throw ConfigError("train and test splits must be non-empty");
  const NumericsScope numerics(config.check_numerics);
  const auto& mc = model.config();
  const ChannelStats stats = compute_channel_stats(data.train, mc.input_height, mc.input_width);
  Adam<float> opt(model.parameters(), config.lr, config.beta1, config.beta2, config.eps);
  const std::uint64_t seed = shuffle_seed(config, data_seed);

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const BatchSequence seq(data.train, static_cast<std::size_t>(config.batch_size), seed,
                            static_cast<std::uint64_t>(epoch), stats, mc.input_height, mc.input_width);
    double loss_total = 0.0;
    std::int64_t correct = 0;
    for (std::size_t b = 0; b < seq.size(); ++b) {
      const auto where = "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b);
      try {
        const Batch batch = seq.load(b);
        opt.zero_grad();
        const Tensor<float> logits = model.forward(batch.images, Mode::train);
        const Tensor<float> loss = cross_entropy(logits, batch.labels);
        const double l = static_cast<double>(loss.item());
        if (!std::isfinite(l)) throw NumericError("non-finite loss");
        backward(loss);
        opt.step();
        loss_total += l * static_cast<double>(batch.labels.size());
        correct += top1_correct(logits.value(), batch.labels);
      } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
      }
    }
    const auto n = static_cast<double>(data.train.size());
    result.metrics.push_back({epoch + 1, Split::train, loss_total / n, static_cast<double>(correct) / n});
    if (on_record) on_record(result.metrics.back());
    result.metrics.push_back(evaluate_split(model, data.test, stats, config.batch_size, epoch + 1));
    if (on_record) on_record(result.metrics.back());
  }
  opt.zero_grad();
  result.checkpoint = make_checkpoint(model, &opt, stats, config);
  return result;
}

std::uint64_t data_order_hash(std::size_t train_size, const TrainConfig& config, std::uint64_t data_seed) {
  std::uint64_t h = hash_string("data-order");
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : batch_plan(train_size, static_cast<std::size_t>(config.batch_size),
                                        shuffle_seed(config, data_seed), static_cast<std::uint64_t>(epoch), true)) {
      for (const auto i : batch) h = mix_keys(h, i);
      h = mix_keys(h, ~0ULL);
    }
  }
  return h;
}

// ---- ablation ----

namespace {

struct Layout {
  const char* id;
  int bot;
  bool irc;
};

constexpr Layout kLayouts[] = {{"bot0", 0, false}, {"bot1", 1, false}, {"bot1_irc", 1, true},
                               {"bot2", 2, false}, {"bot2_irc", 2, true}};

GridEntry entry(std::string id, const ModelConfig& base, int bot, bool irc, int kmod, std::string data = {}) {
  GridEntry e{std::move(id), base, std::move(data)};
  e.model.bot_blocks = bot;
  e.model.irc = irc;
  e.model.kernel_mod = kmod;
  return e;
}

}  // namespace

std::vector<std::string> ablation_preset_names() { return {"table1", "table2", "table3", "full"}; }

std::vector<GridEntry> ablation_preset(const std::string& name, const ModelConfig& base) {
  std::vector<GridEntry> grid;
  if (name == "table1") {
    grid.push_back(entry("raw", base, 0, false, 0));
    grid.push_back(entry("augmented", base, 0, false, 0, "augmented"));
  } else if (name == "table2") {
    for (int k = 0; k <= 4; ++k) grid.push_back(entry("kmod" + std::to_string(k), base, 0, false, k));
  } else if (name == "table3") {
    for (const auto& l : kLayouts) grid.push_back(entry(l.id, base, l.bot, l.irc, 0));
  } else if (name == "full") {
    for (int k = 0; k <= 4; ++k) {
      for (const auto& l : kLayouts) {
        grid.push_back(entry("kmod" + std::to_string(k) + "_" + l.id, base, l.bot, l.irc, k));
      }
    }
  } else {
    std::string valid;
    for (const auto& n : ablation_preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation preset '" + name + "' (valid: " + valid + ")");
  }
  return grid;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = std::string(kAblationHeader) + "\n";
  char wall[32];
  for (const auto& r : rows) {
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_seconds);
    out += r.entry.config_id + "," + std::to_string(r.entry.model.bot_blocks) + "," +
           (r.entry.model.irc ? "1" : "0") + "," + std::to_string(r.entry.model.kernel_mod) + "," +
           (r.error.empty() ? format_double(r.test_accuracy) : std::string("nan")) + "," +
           std::to_string(r.param_count) + "," + wall + "\n";
  }
  return out;
}

std::string ablation_manifest(std::span<const AblationRow> rows, const TrainConfig& config,
                              std::uint64_t data_seed) {
  std::ostringstream os;
  os << to_text(config) << "data.seed=" << data_seed << "\n\n";
  os << "config_id,data_variant,model_seed,train_seed,data_seed,data_order_hash,status\n";
  for (const auto& r : rows) {
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.data_order));
    os << r.entry.config_id << ',' << (r.entry.data_variant.empty() ? "raw" : r.entry.data_variant) << ','
       << r.entry.model.seed << ',' << config.seed << ',' << data_seed << ',' << hash << ','
       << (r.error.empty() ? "ok" : "failed: " + r.error) << '\n';
  }
  return os.str();
}

std::vector<AblationRow> run_ablation(std::span<const GridEntry> grid, const DatasetProvider& datasets,
                                      const TrainConfig& config, std::uint64_t data_seed,
                                      const RowCallback& on_row) {
  std::vector<AblationRow> rows;
  for (const auto& e : grid) {
    AblationRow row;
    row.entry = e;
    const auto start = std::chrono::steady_clock::now();
    try {
      Network<float> model(e.model);
      row.param_count = model.param_count();
      const Dataset& data = datasets(e.data_variant);
      row.data_order = data_order_hash(data.train.size(), config, data_seed);
      const TrainResult result = train(model, data, config, data_seed);
      row.test_accuracy = result.metrics.back().top1_accuracy;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
    if (on_row) on_row(rows.back());
  }
  return rows;
}

}  // namespace rockres
