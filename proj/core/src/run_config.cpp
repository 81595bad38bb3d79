#include "dbsfm/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <functional>
#include <variant>

#include "dbsfm/error.hpp"

namespace dbsfm {

namespace {

static_assert(sizeof(std::size_t) == sizeof(std::uint64_t));
using FieldRef = std::variant<double*, std::size_t*, std::int64_t*, bool*, Taper*, ValSplit*>;

struct Entry {
  const char* key;
  std::function<FieldRef(RunConfig&)> field;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"seed", [](RunConfig& c) -> FieldRef { return reinterpret_cast<std::size_t*>(&c.seed); }},

      {"welch.fs_hz", [](RunConfig& c) -> FieldRef { return &c.tokenizer.welch.fs_hz; }},
      {"welch.segment_len", [](RunConfig& c) -> FieldRef { return &c.tokenizer.welch.segment_len; }},
      {"welch.overlap", [](RunConfig& c) -> FieldRef { return &c.tokenizer.welch.overlap; }},
      {"welch.taper", [](RunConfig& c) -> FieldRef { return &c.tokenizer.welch.taper; }},
      {"welch.log_floor", [](RunConfig& c) -> FieldRef { return &c.tokenizer.welch.log_floor; }},

      {"tokenizer.window_s", [](RunConfig& c) -> FieldRef { return &c.tokenizer.window_s; }},
      {"tokenizer.tokens_per_sequence", [](RunConfig& c) -> FieldRef { return &c.tokenizer.tokens_per_sequence; }},
      {"tokenizer.label_tolerance_s", [](RunConfig& c) -> FieldRef { return &c.tokenizer.label_tolerance_s; }},

      {"model.d_model", [](RunConfig& c) -> FieldRef { return &c.model.d_model; }},
      {"model.d_ff", [](RunConfig& c) -> FieldRef { return &c.model.d_ff; }},
      {"model.n_heads", [](RunConfig& c) -> FieldRef { return &c.model.n_heads; }},
      {"model.n_layers", [](RunConfig& c) -> FieldRef { return &c.model.n_layers; }},
      {"model.head_hidden", [](RunConfig& c) -> FieldRef { return &c.model.head_hidden; }},
      {"model.layernorm_eps", [](RunConfig& c) -> FieldRef { return &c.model.layernorm_eps; }},

      {"pretrain.epochs", [](RunConfig& c) -> FieldRef { return &c.pretrain.epochs; }},
      {"pretrain.batch", [](RunConfig& c) -> FieldRef { return &c.pretrain.batch; }},
      {"pretrain.mask_ratio", [](RunConfig& c) -> FieldRef { return &c.pretrain.mask_ratio; }},
      {"pretrain.lr", [](RunConfig& c) -> FieldRef { return &c.pretrain.adamw.lr; }},
      {"pretrain.beta1", [](RunConfig& c) -> FieldRef { return &c.pretrain.adamw.beta1; }},
      {"pretrain.beta2", [](RunConfig& c) -> FieldRef { return &c.pretrain.adamw.beta2; }},
      {"pretrain.eps", [](RunConfig& c) -> FieldRef { return &c.pretrain.adamw.eps; }},
      {"pretrain.weight_decay", [](RunConfig& c) -> FieldRef { return &c.pretrain.adamw.weight_decay; }},
      {"pretrain.val_fraction", [](RunConfig& c) -> FieldRef { return &c.pretrain.val_fraction; }},
      {"pretrain.val_split", [](RunConfig& c) -> FieldRef { return &c.pretrain.split; }},

      {"finetune.max_epochs", [](RunConfig& c) -> FieldRef { return &c.finetune.max_epochs; }},
      {"finetune.batch", [](RunConfig& c) -> FieldRef { return &c.finetune.batch; }},
      {"finetune.patience", [](RunConfig& c) -> FieldRef { return &c.finetune.patience; }},
      {"finetune.lr", [](RunConfig& c) -> FieldRef { return &c.finetune.adamw.lr; }},
      {"finetune.beta1", [](RunConfig& c) -> FieldRef { return &c.finetune.adamw.beta1; }},
      {"finetune.beta2", [](RunConfig& c) -> FieldRef { return &c.finetune.adamw.beta2; }},
      {"finetune.eps", [](RunConfig& c) -> FieldRef { return &c.finetune.adamw.eps; }},
      {"finetune.weight_decay", [](RunConfig& c) -> FieldRef { return &c.finetune.adamw.weight_decay; }},
      {"finetune.val_fraction", [](RunConfig& c) -> FieldRef { return &c.finetune.val_fraction; }},
      {"finetune.val_split", [](RunConfig& c) -> FieldRef { return &c.finetune.split; }},
      {"finetune.freeze_backbone", [](RunConfig& c) -> FieldRef { return &c.finetune.freeze_backbone; }},

      {"loss.scaled", [](RunConfig& c) -> FieldRef { return &c.loss.scaled; }},
      {"loss.hour_weight", [](RunConfig& c) -> FieldRef { return &c.loss.hour_weight; }},

      {"synth.subjects", [](RunConfig& c) -> FieldRef { return &c.synth.subjects; }},
      {"synth.days", [](RunConfig& c) -> FieldRef { return &c.synth.days; }},

      {"cv.jobs", [](RunConfig& c) -> FieldRef { return &c.cv.jobs; }},
      {"cv.permutation_control", [](RunConfig& c) -> FieldRef { return &c.cv.permutation_control; }},
  };
  return entries;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

const char* taper_name(Taper t) { return t == Taper::kHann ? "hann" : "rectangular"; }
const char* split_name(ValSplit s) {
  switch (s) {
    case ValSplit::kChronological: return "chronological";
    case ValSplit::kSubject: return "subject";
    case ValSplit::kInterleaved: return "interleaved";
  }
  return "chronological";
}

const Entry* find_entry(std::string_view key) {
  for (const auto& e : registry()) {
    if (key == e.key) return &e;
  }
  return nullptr;
}

std::string value_text(const FieldRef& ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) return format_double(*p);
        else if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
        else if constexpr (std::is_same_v<T, Taper>) return std::string("\"") + taper_name(*p) + "\"";
        else if constexpr (std::is_same_v<T, ValSplit>) return std::string("\"") + split_name(*p) + "\"";
        else return std::to_string(*p);
      },
      ref);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (e == nullptr) throw ConfigError("unknown config key '" + std::string(key) + "'");
  const std::string_view text = trim(value);
  FieldRef ref = e->field(*this);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (text == "true") *p = true;
          else if (text == "false") *p = false;
          else throw ConfigError("config key '" + std::string(key) + "': expected true or false");
        } else if constexpr (std::is_same_v<T, Taper>) {
          const auto s = unquote(text);
          if (s == "hann") *p = Taper::kHann;
          else if (s == "rectangular") *p = Taper::kRectangular;
          else throw ConfigError("config key '" + std::string(key) + "': expected \"hann\" or \"rectangular\"");
        } else if constexpr (std::is_same_v<T, ValSplit>) {
          const auto s = unquote(text);
          if (s == "chronological") *p = ValSplit::kChronological;
          else if (s == "subject") *p = ValSplit::kSubject;
          else if (s == "interleaved") *p = ValSplit::kInterleaved;
          else throw ConfigError("config key '" + std::string(key) + "': expected \"chronological\", \"subject\" or \"interleaved\"");
        } else {
          *p = parse_number<T>(key, text);
        }
      },
      ref);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.emplace_back(e.key);
  return out;
}

void RunConfig::resolve() {
  try {
    tokenizer.welch.validate();
    if (tokenizer.window_s <= 0 || tokenizer.tokens_per_sequence == 0)
      throw ConfigError("tokenizer.window_s and tokenizer.tokens_per_sequence must be positive");
    model.input_dim = tokenizer.feature_dim();
    model.seq_positions = tokenizer.tokens_per_sequence + 1;
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid configuration: ") + what);
  };
  for (const AdamWConfig* a : {&pretrain.adamw, &finetune.adamw}) {
    require(a->lr > 0.0, "lr must be positive");
    require(a->beta1 >= 0.0 && a->beta1 < 1.0 && a->beta2 >= 0.0 && a->beta2 < 1.0, "betas must lie in [0, 1)");
    require(a->eps > 0.0, "eps must be positive");
    require(a->weight_decay >= 0.0, "weight_decay must be >= 0");
  }
  require(pretrain.epochs > 0 && pretrain.batch > 0, "pretrain.epochs and pretrain.batch must be positive");
  require(pretrain.mask_ratio > 0.0 && pretrain.mask_ratio < 1.0, "pretrain.mask_ratio must lie in (0, 1)");
  require(pretrain.val_fraction >= 0.0 && pretrain.val_fraction < 1.0, "pretrain.val_fraction must lie in [0, 1)");
  require(finetune.max_epochs > 0 && finetune.batch > 0, "finetune.max_epochs and finetune.batch must be positive");
  require(finetune.patience > 0, "finetune.patience must be positive");
  require(finetune.val_fraction >= 0.0 && finetune.val_fraction < 1.0, "finetune.val_fraction must lie in [0, 1)");
  require(std::isfinite(loss.hour_weight) && loss.hour_weight >= 0.0, "loss.hour_weight must be >= 0");
  require(synth.subjects >= 2, "synth.subjects must be at least 2");
  require(synth.days > 0.0, "synth.days must be positive");
  require(cv.jobs >= 1, "cv.jobs must be at least 1");
}

ModelConfig RunConfig::model_config() const {
  RunConfig copy = *this;
  copy.resolve();
  return copy.model;
}

PretrainHyper RunConfig::pretrain_hyper() const {
  PretrainHyper h = pretrain;
  h.hour_weight = loss.hour_weight;
  h.scaled_loss = loss.scaled;
  h.bin_freqs = tokenizer.bin_freqs();
  h.seed = seed;
  return h;
}

FinetuneHyper RunConfig::finetune_hyper() const {
  FinetuneHyper h = finetune;
  h.seed = seed;
  return h;
}

std::string RunConfig::to_toml() const {
  RunConfig& self = const_cast<RunConfig&>(*this);  // accessors are shared with set()
  std::string out;
  std::string section;
  for (const auto& e : registry()) {
    std::string_view key(e.key);
    const auto dot = key.find('.');
    const std::string sec = dot == std::string_view::npos ? "" : std::string(key.substr(0, dot));
    const std::string name(dot == std::string_view::npos ? key : key.substr(dot + 1));
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + value_text(e.field(self)) + "\n";
  }
  return out;
}

RunConfig RunConfig::from_toml(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++lineno;

    // strip a trailing comment outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const bool known = std::any_of(registry().begin(), registry().end(), [&](const Entry& e) {
        return std::string_view(e.key).starts_with(section + ".");
      });
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    try {
      cfg.set(section.empty() ? key : section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.resolve();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_toml(text);
}

}  // namespace dbsfm
