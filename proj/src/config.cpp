#include "bikop/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace bikop {

using nlohmann::json;

namespace {

struct KeyEntry {
  std::string key;
  std::string desc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

TextMode text_mode_from_name(const std::string& key, const std::string& v) {
  if (v == "none") return TextMode::None;
  if (v == "name_only") return TextMode::NameOnly;
  if (v == "meta_prompt") return TextMode::MetaPrompt;
  throw ConfigError("config: key '" + key + "' expects none, name_only or meta_prompt, got '" +
                    v + "'");
}

const char* text_mode_name(TextMode m) {
  switch (m) {
    case TextMode::None: return "none";
    case TextMode::NameOnly: return "name_only";
    case TextMode::MetaPrompt: return "meta_prompt";
  }
  return "?";
}

FilterMode filter_mode_from_name(const std::string& key, const std::string& v) {
  if (v == "hard") return FilterMode::Hard;
  if (v == "soft") return FilterMode::Soft;
  throw ConfigError("config: key '" + key + "' expects hard or soft, got '" + v + "'");
}

#define INT_KEY(name, field, desc)                                                       \
  {name, desc, [](RunConfig& c, const std::string& v) { c.field = parse_int(name, v); }, \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define U64_KEY(name, field, desc)                                                       \
  {name, desc, [](RunConfig& c, const std::string& v) { c.field = parse_u64(name, v); }, \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define DBL_KEY(name, field, desc)                                                          \
  {name, desc, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
   [](const RunConfig& c) {                                                                 \
     std::ostringstream os;                                                                 \
     os << c.field;                                                                         \
     return os.str();                                                                       \
   }}
#define BOOL_KEY(name, field, desc)                                                       \
  {name, desc, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
   [](const RunConfig& c) { return c.field ? "true" : "false"; }}

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = {
      INT_KEY("data.image_size", data.image_size, "square image side in pixels"),
      INT_KEY("data.patch_size", data.patch_size, "patch side P; image_size must divide by it"),
      INT_KEY("data.n_base", data.n_base, "base (training) classes"),
      INT_KEY("data.n_val", data.n_val, "validation classes"),
      INT_KEY("data.n_novel", data.n_novel, "novel (test) classes"),
      INT_KEY("data.images_per_class", data.images_per_class, "rendered images per class"),
      INT_KEY("data.n_shapes", data.n_shapes, "shape generator vocabulary size"),
      INT_KEY("data.n_palettes", data.n_palettes, "palette generator vocabulary size"),
      U64_KEY("data.seed", data.master_seed, "master seed for classes, splits and pixels"),

      INT_KEY("model.layers", model.backbone.layers, "transformer depth L"),
      INT_KEY("model.split_layer", model.backbone.split_layer,
              "layer after which permeation runs"),
      INT_KEY("model.c_d", model.backbone.c_d, "channel dimension C_d"),
      INT_KEY("model.heads", model.backbone.heads, "attention heads"),
      INT_KEY("model.mlp_ratio", model.backbone.mlp_ratio, "feed-forward expansion"),
      BOOL_KEY("model.pos_embedding", model.backbone.pos_embedding,
               "learned positional embedding"),
      BOOL_KEY("model.gap_includes_prompt", model.backbone.gap_includes_prompt,
               "pool over M+1 tokens (false: patches only)"),
      U64_KEY("model.init_seed", model.init_seed, "parameter initialization seed"),

      {"text.mode", "none, name_only or meta_prompt",
       [](RunConfig& c, const std::string& v) {
         c.model.text.mode = text_mode_from_name("text.mode", v);
       },
       [](const RunConfig& c) { return text_mode_name(c.model.text.mode); }},
      INT_KEY("text.w", model.text.prefix_len, "learnable prefix tokens per slot"),
      INT_KEY("text.n_slots", model.text.n_slots, "episode slots in the prompt bank"),
      INT_KEY("text.token_dim", model.text.token_dim, "frozen token embedding width"),

      BOOL_KEY("bkp.enabled", model.bkp.enabled, "knowledge permeation on/off"),
      DBL_KEY("bkp.mu", model.bkp.mu, "permeation weight"),
      {"bkp.fusion", "cross_attention, dot, add or concat",
       [](RunConfig& c, const std::string& v) { c.model.bkp.fusion = fusion_from_name(v); },
       [](const RunConfig& c) { return fusion_name(c.model.bkp.fusion); }},
      {"bkp.direction", "bidirectional, text_to_vision or vision_to_text",
       [](RunConfig& c, const std::string& v) {
         c.model.bkp.direction = direction_from_name(v);
       },
       [](const RunConfig& c) { return direction_name(c.model.bkp.direction); }},
      BOOL_KEY("bkp.az_softmax_over_patches", model.bkp.az_softmax_over_patches,
               "normalize the vision-side map over patches instead of the key axis"),

      BOOL_KEY("sad.enabled", model.sad.enabled, "channel disentanglement on/off"),
      INT_KEY("sad.m", model.sad.m, "filter sample count (0 = c_d/2)"),
      DBL_KEY("sad.gumbel_temp", model.sad.gumbel_temp, "Gumbel-Softmax temperature"),
      INT_KEY("sad.mlp_depth", model.sad.mlp_depth, "filter net depth (1-3)"),
      {"sad.train_mode", "hard or soft sampling during training",
       [](RunConfig& c, const std::string& v) {
         c.model.sad.train_mode = filter_mode_from_name("sad.train_mode", v);
       },
       [](const RunConfig& c) {
         return c.model.sad.train_mode == FilterMode::Hard ? "hard" : "soft";
       }},
      {"sad.eval_prototype", "classify eval queries against relevant or full prototypes",
       [](RunConfig& c, const std::string& v) {
         c.model.sad.eval_prototype = eval_prototype_from_name(v);
       },
       [](const RunConfig& c) { return eval_prototype_name(c.model.sad.eval_prototype); }},

      DBL_KEY("loss.tau", model.loss.tau, "cosine-logit temperature"),
      DBL_KEY("loss.gamma", model.loss.gamma, "adversarial loss weight"),

      INT_KEY("train.pretrain_epochs", train.pretrain_epochs, "supervised warm-up epochs"),
      INT_KEY("train.pretrain_batch", train.pretrain_batch, "warm-up batch size"),
      DBL_KEY("train.pretrain_lr", train.pretrain_lr, "warm-up learning rate"),
      INT_KEY("train.finetune_episodes", train.finetune_episodes, "episodic training budget"),
      DBL_KEY("train.base_lr", train.base_lr, "fine-tune base learning rate"),
      DBL_KEY("train.weight_decay", train.weight_decay, "decoupled weight decay"),
      DBL_KEY("train.lr_mult_bkp", train.lr_mult_bkp, "lr multiplier for permeation params"),
      DBL_KEY("train.lr_mult_sad", train.lr_mult_sad, "lr multiplier for filter params"),
      INT_KEY("train.n_way", train.n_way, "classes per training episode"),
      INT_KEY("train.k_shot", train.k_shot, "support shots per class"),
      INT_KEY("train.n_query", train.n_query, "queries per class in training episodes"),
      INT_KEY("train.val_every", train.val_every, "validate every this many episodes"),
      INT_KEY("train.val_episodes", train.val_episodes, "validation episodes (0 disables)"),
      INT_KEY("train.val_n_query", train.val_n_query, "queries per class in validation"),
      U64_KEY("train.seed", train.seed, "training stream seed"),

      INT_KEY("eval.n_episodes", eval.n_episodes, "test episodes"),
      INT_KEY("eval.n_way", eval.n_way, "classes per test episode"),
      INT_KEY("eval.k_shot", eval.k_shot, "support shots per class"),
      INT_KEY("eval.n_query", eval.n_query, "queries per class"),
      U64_KEY("eval.seed", eval.seed, "evaluation stream seed"),
      INT_KEY("eval.threads", eval.threads, "evaluation worker threads (0 = auto)"),
      {"eval.split", "base, val or novel",
       [](RunConfig& c, const std::string& v) {
         (void)split_from_name(v);
         c.eval_split = v;
       },
       [](const RunConfig& c) { return c.eval_split; }},
  };
  return table;
}

#undef INT_KEY
#undef U64_KEY
#undef DBL_KEY
#undef BOOL_KEY

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& entry : key_table()) {
    if (entry.key == key) {
      entry.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config file not found: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      lineno++;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      size_t eq = s.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                          ": expected 'key = value', got '" + s + "'");
      }
      set_config_key(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
  }
  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: override '" + ov + "' must be key=value");
    }
    set_config_key(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() {
  // dependent dims are derived before module invariants run
  model.backbone.patch_size = data.patch_size;
  model.backbone.image_h = data.image_size;
  model.backbone.image_w = data.image_size;
  model.backbone.channels = data.channels;
  model.text.out_dim = model.backbone.c_d;
  model.text.vocab = data.n_shapes + data.n_palettes;
  model.bkp.c_d = model.backbone.c_d;
  model.sad.c_d = model.backbone.c_d;

  data.validate();
  model.validate();
  train.validate();
  eval.validate();
  (void)split_from_name(eval_split);
  if (model.text.mode == TextMode::MetaPrompt &&
      (train.n_way > model.text.n_slots || eval.n_way > model.text.n_slots)) {
    throw ConfigError("config: text.n_slots (" + std::to_string(model.text.n_slots) +
                      ") must cover the largest episode n_way");
  }
}

std::string RunConfig::to_json() const {
  json j;
  for (const auto& entry : key_table()) {
    size_t dot = entry.key.find('.');
    j[entry.key.substr(0, dot)][entry.key.substr(dot + 1)] = entry.get(*this);
  }
  return j.dump(2);
}

std::vector<std::string> config_key_help() {
  std::vector<std::string> out;
  RunConfig defaults;
  for (const auto& entry : key_table()) {
    out.push_back(entry.key + " (default " + entry.get(defaults) + "): " + entry.desc);
  }
  return out;
}

}  // namespace bikop
