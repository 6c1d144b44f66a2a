#include "zodiac/config_io.hpp"

#include <json.hpp>

#include "zodiac/errors.hpp"

namespace zodiac {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads keys out of one JSON object, rejecting anything not consumed.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.push_back(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(join(path_, key), "wrong type " + std::string(it->type_name()));
    }
  }

  void read_size(const char* key, std::size_t& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.push_back(key);
    if (!it->is_number_integer() || it->get<long long>() < 0) {
      throw ConfigError(join(path_, key), "expected a non-negative integer");
    }
    out = it->get<std::size_t>();
  }

  void read_u64(const char* key, std::uint64_t& out) {
    std::size_t v = out;
    read_size(key, v);
    out = v;
  }

  template <class F>
  void read_string(const char* key, F&& assign) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    seen_.push_back(key);
    if (!it->is_string()) throw ConfigError(join(path_, key), "expected a string");
    if (!assign(it->get<std::string>())) {
      throw ConfigError(join(path_, key), "unrecognized value '" + it->get<std::string>() + "'");
    }
  }

  const json* child(const char* key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.push_back(key);
    return &*it;
  }

  std::string path(const char* key) const { return join(path_, key); }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError(join(path_, it.key()), "unknown key");
      }
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

json gelu_json(const GeluSites& g) {
  return {{"pre_linear", g.pre_linear}, {"on_qk", g.on_qk}, {"post_scale", g.post_scale},
          {"on_v", g.on_v}, {"piv_map", g.piv_map}};
}

json attention_json(const AttentionConfig& a) {
  return {{"d_k", a.d_k},
          {"d_v", a.d_v},
          {"system_dropout", a.system_dropout},
          {"zodiac_dropout", a.zodiac_dropout},
          {"zoneout", a.zoneout},
          {"gate", a.gate ? std::string(to_string(*a.gate)) : std::string("none")},
          {"gelu", gelu_json(a.gelu)},
          {"gelu_form", a.gelu_form == GeluForm::exact ? "exact" : "approx"},
          {"piv_enabled", a.piv_enabled},
          {"use_bias", a.use_bias}};
}

json kind_or_null(const std::optional<AttentionKind>& k) {
  return k ? json(std::string(to_string(*k))) : json(nullptr);
}

json model_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size},
          {"d_model", m.d_model},
          {"heads", m.heads},
          {"n_encoder_layers", m.n_encoder_layers},
          {"n_decoder_layers", m.n_decoder_layers},
          {"d_ff", m.d_ff},
          {"attention_kind", std::string(to_string(m.attention_kind))},
          {"attention", attention_json(m.attention)},
          {"max_len", m.max_len},
          {"seed", m.seed},
          {"ffn_activation", m.ffn_activation == FfnActivation::gelu ? "gelu" : "relu"},
          {"encoder_self_kind", kind_or_null(m.encoder_self_kind)},
          {"decoder_self_kind", kind_or_null(m.decoder_self_kind)},
          {"decoder_cross_kind", kind_or_null(m.decoder_cross_kind)}};
}

json task_json(const TaskSpec& t) {
  return {{"kind", std::string(to_string(t.kind))}, {"vocab_size", t.vocab_size}, {"seq_len", t.seq_len},
          {"n_train", t.n_train},                   {"n_eval", t.n_eval},         {"seed", t.seed}};
}

json train_json(const TrainConfig& t) {
  return {{"base_lr", t.base_lr},
          {"decay_factor", t.decay_factor},
          {"decay_every", t.decay_every},
          {"decay_anchor", t.decay_anchor == DecayAnchor::multiples ? "multiples" : "first_epoch"},
          {"max_epochs", t.max_epochs},
          {"max_steps", t.max_steps},
          {"batch_size", t.batch_size},
          {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"eval_beam_size", t.eval_beam_size},
          {"target_accuracy", t.target_accuracy ? json(*t.target_accuracy) : json(nullptr)},
          {"loss", "cross_entropy"}};
}

std::optional<AttentionKind> parse_kind(const std::string& s) {
  if (s == "zodiac") return AttentionKind::zodiac;
  if (s == "baseline") return AttentionKind::baseline;
  return std::nullopt;
}

void read_gelu(const json& j, const std::string& path, GeluSites& g) {
  Reader r(j, path);
  r.read("pre_linear", g.pre_linear);
  r.read("on_qk", g.on_qk);
  r.read("post_scale", g.post_scale);
  r.read("on_v", g.on_v);
  r.read("piv_map", g.piv_map);
  r.finish();
}

void read_attention(const json& j, const std::string& path, AttentionConfig& a) {
  Reader r(j, path);
  r.read_size("d_k", a.d_k);
  r.read_size("d_v", a.d_v);
  r.read("system_dropout", a.system_dropout);
  r.read("zodiac_dropout", a.zodiac_dropout);
  r.read("zoneout", a.zoneout);
  r.read_string("gate", [&](const std::string& s) {
    if (s == "none") {
      a.gate.reset();
      return true;
    }
    a.gate = parse_gate(s);
    return a.gate.has_value();
  });
  if (const auto* g = r.child("gelu")) read_gelu(*g, r.path("gelu"), a.gelu);
  r.read_string("gelu_form", [&](const std::string& s) {
    if (s != "exact" && s != "approx") return false;
    a.gelu_form = s == "exact" ? GeluForm::exact : GeluForm::approx;
    return true;
  });
  r.read("piv_enabled", a.piv_enabled);
  r.read("use_bias", a.use_bias);
  r.finish();
}

void read_optional_kind(Reader& r, const char* key, std::optional<AttentionKind>& out) {
  const auto* j = r.child(key);
  if (!j) return;
  if (j->is_null()) {
    out.reset();
    return;
  }
  if (!j->is_string() || !parse_kind(j->get<std::string>())) {
    throw ConfigError(r.path(key), "expected null, \"baseline\" or \"zodiac\"");
  }
  out = parse_kind(j->get<std::string>());
}

void read_model(const json& j, const std::string& path, ModelConfig& m) {
  Reader r(j, path);
  r.read_size("vocab_size", m.vocab_size);
  r.read_size("d_model", m.d_model);
  r.read_size("heads", m.heads);
  r.read_size("n_encoder_layers", m.n_encoder_layers);
  r.read_size("n_decoder_layers", m.n_decoder_layers);
  r.read_size("d_ff", m.d_ff);
  r.read_string("attention_kind", [&](const std::string& s) {
    const auto k = parse_kind(s);
    if (k) m.attention_kind = *k;
    return k.has_value();
  });
  // Derived head sizes follow d_model/heads unless the document sets them.
  m.sync_attention();
  if (const auto* a = r.child("attention")) read_attention(*a, r.path("attention"), m.attention);
  r.read_size("max_len", m.max_len);
  r.read_u64("seed", m.seed);
  r.read_string("ffn_activation", [&](const std::string& s) {
    if (s != "gelu" && s != "relu") return false;
    m.ffn_activation = s == "gelu" ? FfnActivation::gelu : FfnActivation::relu;
    return true;
  });
  read_optional_kind(r, "encoder_self_kind", m.encoder_self_kind);
  read_optional_kind(r, "decoder_self_kind", m.decoder_self_kind);
  read_optional_kind(r, "decoder_cross_kind", m.decoder_cross_kind);
  r.finish();
}

void read_task(const json& j, const std::string& path, TaskSpec& t) {
  Reader r(j, path);
  r.read_string("kind", [&](const std::string& s) {
    const auto k = parse_task_kind(s);
    if (k) t.kind = *k;
    return k.has_value();
  });
  r.read_size("vocab_size", t.vocab_size);
  r.read_size("seq_len", t.seq_len);
  r.read_size("n_train", t.n_train);
  r.read_size("n_eval", t.n_eval);
  r.read_u64("seed", t.seed);
  r.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& t) {
  Reader r(j, path);
  r.read("base_lr", t.base_lr);
  r.read("decay_factor", t.decay_factor);
  r.read_size("decay_every", t.decay_every);
  r.read_string("decay_anchor", [&](const std::string& s) {
    if (s != "multiples" && s != "first_epoch") return false;
    t.decay_anchor = s == "multiples" ? DecayAnchor::multiples : DecayAnchor::first_epoch;
    return true;
  });
  r.read_size("max_epochs", t.max_epochs);
  r.read_size("max_steps", t.max_steps);
  r.read_size("batch_size", t.batch_size);
  if (const auto* a = r.child("adam")) {
    Reader ar(*a, r.path("adam"));
    ar.read("beta1", t.adam.beta1);
    ar.read("beta2", t.adam.beta2);
    ar.read("eps", t.adam.eps);
    ar.finish();
  }
  r.read_u64("seed", t.seed);
  r.read_size("checkpoint_every", t.checkpoint_every);
  r.read_size("eval_beam_size", t.eval_beam_size);
  if (const auto* ta = r.child("target_accuracy")) {
    if (ta->is_null()) {
      t.target_accuracy.reset();
    } else if (ta->is_number()) {
      t.target_accuracy = ta->get<double>();
    } else {
      throw ConfigError(r.path("target_accuracy"), "expected a number or null");
    }
  }
  r.read_string("loss", [&](const std::string& s) {
    if (s == "cross_entropy") return true;
    if (s == "scst") throw ConfigError(r.path("loss"), "self-critical training is not supported");
    return false;
  });
  r.finish();
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

std::string to_json_string(const RunConfig& cfg, int indent) {
  json j{{"model", model_json(cfg.model)}, {"task", task_json(cfg.task)}, {"train", train_json(cfg.train)}};
  return j.dump(indent);
}

std::string to_json_string(const ModelConfig& cfg, int indent) { return model_json(cfg).dump(indent); }
std::string to_json_string(const TaskSpec& spec, int indent) { return task_json(spec).dump(indent); }
std::string to_json_string(const TrainConfig& cfg, int indent) { return train_json(cfg).dump(indent); }

RunConfig parse_run_config(std::string_view text, const RunConfig& base) {
  const auto j = parse_text(text);
  RunConfig out = base;
  Reader r(j, "");
  if (const auto* m = r.child("model")) read_model(*m, "model", out.model);
  if (const auto* t = r.child("task")) read_task(*t, "task", out.task);
  if (const auto* t = r.child("train")) read_train(*t, "train", out.train);
  r.finish();
  return out;
}

ModelConfig parse_model_config(std::string_view text, const ModelConfig& base) {
  ModelConfig out = base;
  read_model(parse_text(text), "model", out);
  return out;
}

TaskSpec parse_task_spec(std::string_view text, const TaskSpec& base) {
  TaskSpec out = base;
  read_task(parse_text(text), "task", out);
  return out;
}

TrainConfig parse_train_config(std::string_view text, const TrainConfig& base) {
  TrainConfig out = base;
  read_train(parse_text(text), "train", out);
  return out;
}

}  // namespace zodiac
