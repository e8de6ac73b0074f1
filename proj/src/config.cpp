#include "stal3d/config.hpp"

#include "stal3d/errors.hpp"
#include "stal3d/io.hpp"

namespace stal3d {

namespace {

nlohmann::json terms_json(TermSet t) {
  std::vector<std::string> names;
  for (Term x : kAllTerms) {
    if (t.contains(x)) names.emplace_back(to_string(x));
  }
  return names;
}

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const DetectorConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& p : c.classes) {
    classes.push_back({{"name", p.name}, {"l", p.l}, {"w", p.w}, {"h", p.h}, {"z", p.z},
                       {"pos_iou", p.pos_iou}, {"neg_iou", p.neg_iou}});
  }
  j = {{"grid_h", c.grid_h},           {"grid_w", c.grid_w},
       {"cell_size", c.cell_size},     {"channels", c.channels},
       {"conv_layers", c.conv_layers}, {"num_rotations", c.num_rotations},
       {"classes", classes}};
}

void from_json(const nlohmann::json& j, DetectorConfig& c) {
  c = DetectorConfig::standard();
  maybe(j, "grid_h", c.grid_h);
  maybe(j, "grid_w", c.grid_w);
  maybe(j, "cell_size", c.cell_size);
  maybe(j, "channels", c.channels);
  maybe(j, "conv_layers", c.conv_layers);
  maybe(j, "num_rotations", c.num_rotations);
  if (j.contains("classes")) {
    c.classes.clear();
    for (const auto& p : j.at("classes")) {
      ClassPrior cp;
      cp.name = p.at("name").get<std::string>();
      cp.l = p.at("l").get<double>();
      cp.w = p.at("w").get<double>();
      cp.h = p.at("h").get<double>();
      cp.z = p.value("z", cp.h / 2);
      cp.pos_iou = p.value("pos_iou", cp.pos_iou);
      cp.neg_iou = p.value("neg_iou", cp.neg_iou);
      c.classes.push_back(cp);
    }
  }
}

void RunConfig::validate() const {
  if (detector.grid_h <= 0 || detector.grid_w <= 0 || !(detector.cell_size > 0) ||
      detector.channels <= 1 || detector.conv_layers < 1 || detector.num_rotations < 1 ||
      detector.classes.empty()) {
    throw ConfigError("detector: invalid grid or network shape");
  }
  for (const auto& c : detector.classes) {
    if (!(c.l > 0 && c.w > 0 && c.h > 0) || !(c.neg_iou <= c.pos_iou)) {
      throw ConfigError("detector: invalid prior for class '" + c.name + "'");
    }
  }
  loss.validate();
  adversarial.validate();
  eval.validate();
  ros.validate();
  if (eval.class_names.size() != detector.classes.size()) {
    throw ConfigError("eval classes must match detector classes");
  }
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("optimizer: invalid Adam settings");
  }
  if (pretrain_epochs < 0 || adapt_epochs < 0 || rounds < 0 || batch_size < 1) {
    throw ConfigError("epochs, rounds and batch size must be non-negative (batch >= 1)");
  }
  if (!(adapt_lr > 0)) throw ConfigError("adapt_lr must be positive");
  if (!(phi >= 0)) throw ConfigError("phi must be non-negative");
  if (!(match_iou >= 0 && match_iou <= 1)) throw ConfigError("match_iou must lie in [0, 1]");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["source_dir"] = source_dir.string();
  j["target_dir"] = target_dir.string();
  j["out_dir"] = out_dir.string();
  j["seed"] = seed;
  j["threads"] = threads;
  j["detector"] = detector;
  j["predict"] = {{"score_thresh", predict.score_thresh},
                  {"nms_iou", predict.nms_iou},
                  {"pre_nms_top", predict.pre_nms_top},
                  {"max_detections", predict.max_detections}};
  j["loss"] = {{"lambda_cls", loss.lambda_cls}, {"lambda_reg", loss.lambda_reg},
               {"lambda_iou", loss.lambda_iou}, {"lambda_dir", loss.lambda_dir},
               {"lambda_rs", loss.lambda_rs},   {"alpha", loss.alpha},
               {"gamma", loss.gamma},           {"source_terms", terms_json(loss.source_terms)},
               {"target_terms", terms_json(loss.target_terms)}};
  j["adversarial"] = {{"enabled", adversarial.enabled},
                      {"suppression", to_string(adversarial.mode)},
                      {"k", adversarial.k},
                      {"beta", adversarial.beta},
                      {"grl_lambda", adversarial.grl_lambda},
                      {"normalize", adversarial.normalize}};
  j["optimizer"] = {{"lr", adam.lr},       {"beta1", adam.beta1},
                    {"beta2", adam.beta2}, {"eps", adam.eps},
                    {"weight_decay", adam.weight_decay}, {"grad_clip", adam.grad_clip}};
  j["eval"] = {{"classes", eval.class_names}, {"iou_thresholds", eval.iou_thresholds}};
  j["ros"] = {{"enabled", use_ros},
              {"in_adapt", ros_in_adapt},
              {"l", {ros.l.lo, ros.l.hi}},
              {"w", {ros.w.lo, ros.w.hi}},
              {"h", {ros.h.lo, ros.h.hi}}};
  j["pretrain_epochs"] = pretrain_epochs;
  j["batch_size"] = batch_size;
  j["phi"] = phi;
  j["adapt_lr"] = adapt_lr;
  j["rounds"] = rounds;
  j["adapt_epochs"] = adapt_epochs;
  j["churn_stop"] = churn_stop;
  j["buffer_capacity"] = buffer_capacity;
  j["match_iou"] = match_iou;
  j["eval_each_round"] = eval_each_round;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("source_dir")) c.source_dir = j.at("source_dir").get<std::string>();
    if (j.contains("target_dir")) c.target_dir = j.at("target_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    maybe(j, "detector", c.detector);
    if (j.contains("predict")) {
      const auto& p = j.at("predict");
      maybe(p, "score_thresh", c.predict.score_thresh);
      maybe(p, "nms_iou", c.predict.nms_iou);
      maybe(p, "pre_nms_top", c.predict.pre_nms_top);
      maybe(p, "max_detections", c.predict.max_detections);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      maybe(l, "lambda_cls", c.loss.lambda_cls);
      maybe(l, "lambda_reg", c.loss.lambda_reg);
      maybe(l, "lambda_iou", c.loss.lambda_iou);
      maybe(l, "lambda_dir", c.loss.lambda_dir);
      maybe(l, "lambda_rs", c.loss.lambda_rs);
      maybe(l, "alpha", c.loss.alpha);
      maybe(l, "gamma", c.loss.gamma);
      if (l.contains("source_terms")) {
        c.loss.source_terms = TermSet::parse(l.at("source_terms").get<std::vector<std::string>>());
      }
      if (l.contains("target_terms")) {
        c.loss.target_terms = TermSet::parse(l.at("target_terms").get<std::vector<std::string>>());
      }
    }
    if (j.contains("adversarial")) {
      const auto& a = j.at("adversarial");
      maybe(a, "enabled", c.adversarial.enabled);
      if (a.contains("suppression")) c.adversarial.mode = parse_suppression(a.at("suppression").get<std::string>());
      maybe(a, "k", c.adversarial.k);
      maybe(a, "beta", c.adversarial.beta);
      maybe(a, "grl_lambda", c.adversarial.grl_lambda);
      maybe(a, "normalize", c.adversarial.normalize);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      maybe(o, "lr", c.adam.lr);
      maybe(o, "beta1", c.adam.beta1);
      maybe(o, "beta2", c.adam.beta2);
      maybe(o, "eps", c.adam.eps);
      maybe(o, "weight_decay", c.adam.weight_decay);
      maybe(o, "grad_clip", c.adam.grad_clip);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      maybe(e, "classes", c.eval.class_names);
      maybe(e, "iou_thresholds", c.eval.iou_thresholds);
    }
    if (j.contains("ros")) {
      const auto& r = j.at("ros");
      maybe(r, "enabled", c.use_ros);
      maybe(r, "in_adapt", c.ros_in_adapt);
      for (auto [key, iv] : {std::pair{"l", &c.ros.l}, std::pair{"w", &c.ros.w}, std::pair{"h", &c.ros.h}}) {
        if (!r.contains(key)) continue;
        const auto v = r.at(key).get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError(std::string("ros.") + key + " must be [lo, hi]");
        *iv = {v[0], v[1]};
      }
    }
    maybe(j, "pretrain_epochs", c.pretrain_epochs);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "phi", c.phi);
    maybe(j, "adapt_lr", c.adapt_lr);
    maybe(j, "rounds", c.rounds);
    maybe(j, "adapt_epochs", c.adapt_epochs);
    maybe(j, "churn_stop", c.churn_stop);
    maybe(j, "buffer_capacity", c.buffer_capacity);
    maybe(j, "match_iou", c.match_iou);
    maybe(j, "eval_each_round", c.eval_each_round);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c = from_json(read_json_file(path));
  // Relative dataset paths are resolved against the config file's directory.
  const auto base = path.parent_path();
  for (auto* p : {&c.source_dir, &c.target_dir, &c.out_dir}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return c;
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::SourceOnly: return "source_only";
    case Variant::SelfTraining: return "st";
    case Variant::SelfTrainingBsal: return "st_bsal";
    case Variant::Full: return "full";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (source_only, st, st_bsal, full)");
}

RunConfig apply_variant(RunConfig base, Variant v) {
  switch (v) {
    case Variant::SourceOnly:
      base.rounds = 0;
      break;
    case Variant::SelfTraining:
      base.loss.source_terms = kSupervisedTerms;
      base.loss.target_terms = kSupervisedTerms;
      base.adversarial.enabled = false;
      base.loss.lambda_rs = 0;
      break;
    case Variant::SelfTrainingBsal:
      base.loss.source_terms = kSupervisedTerms;
      base.loss.target_terms = kSupervisedTerms;
      base.adversarial.enabled = true;
      base.adversarial.mode = Suppression::FrsTopK;
      break;
    case Variant::Full:
      base.loss.source_terms = LossConfig{}.source_terms;
      base.loss.target_terms = LossConfig{}.target_terms;
      base.adversarial.enabled = true;
      base.adversarial.mode = Suppression::FrsTopK;
      break;
  }
  return base;
}

}  // namespace stal3d
