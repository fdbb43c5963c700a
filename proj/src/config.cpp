#include "faq_agg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace faq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class I>
I parse_integer(const std::string& key, const std::string& v) {
  I out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ValidationError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw ValidationError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<int>(key, trim(item)));
  if (out.empty()) throw ValidationError(key + ": empty list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct KeyDef {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define FAQ_INT_KEY(NAME, FIELD)                                                               \
  KeyDef{NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },                     \
         [](RunConfig& c, const std::string& v) { c.FIELD = parse_integer<int>(NAME, v); }}
#define FAQ_DOUBLE_KEY(NAME, FIELD)                                                            \
  KeyDef{NAME, [](const RunConfig& c) { return fmt_double(c.FIELD); },                         \
         [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }}
#define FAQ_STRING_KEY(NAME, FIELD)                                                            \
  KeyDef{NAME, [](const RunConfig& c) { return c.FIELD; },                                     \
         [](RunConfig& c, const std::string& v) { c.FIELD = v; }}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table{
      FAQ_INT_KEY("model.image_size", image_size),
      KeyDef{"model.backbone_channels",
             [](const RunConfig& c) {
               std::string s;
               for (std::size_t i = 0; i < c.backbone_channels.size(); ++i) {
                 s += (i ? "," : "") + std::to_string(c.backbone_channels[i]);
               }
               return s;
             },
             [](RunConfig& c, const std::string& v) {
               c.backbone_channels = parse_int_list("model.backbone_channels", v);
             }},
      FAQ_INT_KEY("model.width", detr.width),
      FAQ_INT_KEY("model.encoder_layers", detr.encoder_layers),
      FAQ_INT_KEY("model.decoder_layers", detr.decoder_layers),
      FAQ_INT_KEY("model.heads", detr.heads),
      FAQ_INT_KEY("model.ffn_width", detr.ffn_width),
      FAQ_INT_KEY("model.num_classes", detr.num_classes),
      KeyDef{"agg.mode", [](const RunConfig& c) { return to_string(c.agg.mode); },
             [](RunConfig& c, const std::string& v) { c.agg.mode = parse_agg_mode(v); }},
      KeyDef{"agg.method", [](const RunConfig& c) { return to_string(c.agg.method); },
             [](RunConfig& c, const std::string& v) { c.agg.method = parse_agg_method(v); }},
      FAQ_INT_KEY("agg.l", agg.l),
      FAQ_INT_KEY("agg.r", agg.r),
      FAQ_INT_KEY("agg.m", agg.m),
      KeyDef{"agg.grouping", [](const RunConfig& c) { return to_string(c.agg.grouping); },
             [](RunConfig& c, const std::string& v) { c.agg.grouping = parse_grouping(v); }},
      FAQ_INT_KEY("agg.window", agg.window),
      KeyDef{"agg.grouping_seed", [](const RunConfig& c) { return std::to_string(c.agg.grouping_seed); },
             [](RunConfig& c, const std::string& v) {
               c.agg.grouping_seed = parse_integer<std::uint64_t>("agg.grouping_seed", v);
             }},
      FAQ_DOUBLE_KEY("loss.gamma", gamma),
      KeyDef{"loss.dual", [](const RunConfig& c) { return std::string(c.dual ? "true" : "false"); },
             [](RunConfig& c, const std::string& v) { c.dual = parse_bool("loss.dual", v); }},
      FAQ_DOUBLE_KEY("loss.lambda_cls", loss.cls),
      FAQ_DOUBLE_KEY("loss.lambda_l1", loss.l1),
      FAQ_DOUBLE_KEY("loss.lambda_giou", loss.giou),
      FAQ_DOUBLE_KEY("loss.noobj_weight", loss.noobj),
      FAQ_DOUBLE_KEY("optim.lr", optim.lr),
      FAQ_DOUBLE_KEY("optim.backbone_lr_mult", optim.backbone_lr_mult),
      FAQ_DOUBLE_KEY("optim.weight_decay", optim.weight_decay),
      FAQ_DOUBLE_KEY("optim.grad_clip", optim.grad_clip),
      FAQ_INT_KEY("optim.steps", optim.steps),
      FAQ_INT_KEY("optim.batch_frames", optim.batch_frames),
      FAQ_DOUBLE_KEY("optim.lr_drop", optim.lr_drop),
      FAQ_DOUBLE_KEY("eval.score_thr", score_thr),
      KeyDef{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
             [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>("seed", v); }},
      FAQ_STRING_KEY("data.train", train_data),
      FAQ_STRING_KEY("data.eval", eval_data),
      FAQ_STRING_KEY("run.out_dir", out_dir),
  };
  return table;
}

#undef FAQ_INT_KEY
#undef FAQ_DOUBLE_KEY
#undef FAQ_STRING_KEY

const KeyDef& find_key(const std::string& key) {
  for (const auto& k : key_table()) {
    if (k.name == key) return k;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  backbone().validate();
  detr.validate();
  if (backbone_channels.back() != detr.width) {
    throw ValidationError("model.backbone_channels must end with model.width (" + std::to_string(detr.width) + ")");
  }
  agg.validate();
  loss.validate();
  if (!(gamma >= 0.0)) throw ValidationError("loss.gamma must be non-negative");
  if (dual && agg.mode == AggMode::vanilla) {
    throw ValidationError("loss.dual requires agg.mode dynamic or none");
  }
  if (!(optim.lr > 0.0)) throw ValidationError("optim.lr must be positive");
  if (optim.backbone_lr_mult < 0.0 || optim.weight_decay < 0.0 || optim.grad_clip < 0.0) {
    throw ValidationError("optim multipliers, decay and clip must be non-negative");
  }
  if (optim.steps < 0) throw ValidationError("optim.steps must be >= 0");
  if (optim.batch_frames < 1) throw ValidationError("optim.batch_frames must be >= 1");
  if (optim.lr_drop < 0.0 || optim.lr_drop > 1.0) throw ValidationError("optim.lr_drop must lie in [0, 1]");
  if (score_thr < 0.0 || score_thr > 1.0) throw ValidationError("eval.score_thr must lie in [0, 1]");
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : serialize()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      base.set(key, line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + o + "' is not of the form key=value");
    config.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

}  // namespace faq
