#include "bikop/meta_head.hpp"

#include <cmath>

namespace bikop {

Var compute_prototypes(Tape& t, Var support_features, const std::vector<int>& labels,
                       int n_way, int k_shot) {
  const Mat& feats = t.val(support_features);
  if (feats.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("compute_prototypes: one label per feature row required");
  }
  std::vector<int> counts(static_cast<size_t>(n_way), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_way) {
      throw std::invalid_argument("compute_prototypes: label out of range");
    }
    counts[static_cast<size_t>(l)]++;
  }
  for (int c = 0; c < n_way; ++c) {
    if (counts[static_cast<size_t>(c)] != k_shot) {
      throw std::invalid_argument("compute_prototypes: class " + std::to_string(c) + " has " +
                                  std::to_string(counts[static_cast<size_t>(c)]) +
                                  " support features, expected " + std::to_string(k_shot));
    }
  }
  // Averaging as a fixed matrix keeps the backward pass trivial.
  Mat avg = Mat::Zero(n_way, feats.rows());
  for (size_t i = 0; i < labels.size(); ++i) {
    avg(labels[i], static_cast<Eigen::Index>(i)) = 1.0 / static_cast<double>(k_shot);
  }
  return t.matmul(t.input(avg), support_features);
}

Var cosine_logits(Tape& t, Var query_features, Var prototypes, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("cosine_logits: tau must be positive");
  return t.scale(t.cosine_rows(query_features, prototypes), 1.0 / tau);
}

Var loss_cls(Tape& t, Var logits, const std::vector<int>& labels) {
  return t.cross_entropy_rows(logits, labels);
}

Var loss_adv(Tape& t, Var logits, const std::vector<int>& labels) {
  return t.scale(t.cross_entropy_rows(logits, labels), -1.0);
}

Var loss_total(Tape& t, Var cls, Var adv, double gamma) {
  return t.add(cls, t.scale(adv, gamma));
}

EpisodeOutput forward_episode(Tape& t, Model& model, const Dataset& ds, const Episode& ep,
                              Rng* gumbel_rng, Mode mode, bool record_attention) {
  const auto& bb = model.cfg.backbone;
  const int n = ep.n_way;
  const int m_tokens = bb.tokens();
  if (model.uses_text() &&
      static_cast<int>(ep.slot_of_label.size()) == n) {
    for (int slot : ep.slot_of_label) {
      if (model.cfg.text.mode == TextMode::MetaPrompt &&
          (slot < 0 || slot >= model.cfg.text.n_slots)) {
        throw ConfigError("forward_episode: episode needs prompt slot " +
                          std::to_string(slot) + " but the bank has " +
                          std::to_string(model.cfg.text.n_slots) + " slots");
      }
    }
  }
  if (mode == Mode::Train && model.cfg.sad.enabled && gumbel_rng == nullptr) {
    throw std::invalid_argument("forward_episode: train mode with SAD needs an rng");
  }

  EpisodeOutput out;

  // --- support path ---
  std::vector<int> support_rows;
  std::vector<int> support_labels;
  for (const auto& s : ep.support) {
    support_rows.push_back(s.image_row);
    support_labels.push_back(s.label);
  }
  Mat patches = model.backbone.patchify_batch(ds, support_rows);
  Var tokens = model.backbone.embed_patches(t, patches, static_cast<int>(support_rows.size()));
  Var lower = model.backbone.encode_lower(t, tokens);

  Var support_feats;
  if (model.uses_text()) {
    // per-class prompt embeddings, indexed by episode label
    std::vector<Var> label_text(static_cast<size_t>(n));
    for (int label = 0; label < n; ++label) {
      int slot = ep.slot_of_label[static_cast<size_t>(label)];
      auto name = ds.class_name_tokens(ep.class_ids[static_cast<size_t>(label)]);
      label_text[static_cast<size_t>(label)] = model.text.embed(t, slot, name);
    }
    // permeate per support image with its class's prompt, then append the
    // enhanced prompt token for the joint layers
    Var joint_tokens;
    bool first = true;
    for (size_t i = 0; i < ep.support.size(); ++i) {
      Var z = t.slice_rows(lower, static_cast<int>(i) * m_tokens, m_tokens);
      Var text = label_text[static_cast<size_t>(ep.support[i].label)];
      PermeationResult pr = model.bkp.apply(t, z, text);
      if (record_attention) {
        out.support_a_z.push_back(pr.a_z);
        out.support_a_t.push_back(pr.a_t);
      }
      Var with_prompt = t.concat_rows(pr.z_hat, pr.t_hat);
      joint_tokens = first ? with_prompt : t.concat_rows(joint_tokens, with_prompt);
      first = false;
    }
    support_feats = model.backbone.encode_joint(t, joint_tokens, m_tokens + 1);
  } else {
    support_feats = model.backbone.encode_joint(t, lower, m_tokens);
  }

  Var protos = compute_prototypes(t, support_feats, support_labels, n, ep.k_shot);
  out.prototypes = t.val(protos);

  // --- channel disentanglement ---
  Var rel, irr;
  if (model.cfg.sad.enabled) {
    bool first = true;
    for (int c = 0; c < n; ++c) {
      Var p = t.slice_rows(protos, c, 1);
      Var f;
      if (mode == Mode::Train) {
        f = model.filter.sample_filter(t, p, *gumbel_rng, model.cfg.sad.train_mode);
      } else {
        f = t.input(model.filter.eval_filter(t.val(p)));
      }
      Disentangled d = disentangle(t, p, f);
      rel = first ? d.relevant : t.concat_rows(rel, d.relevant);
      irr = first ? d.irrelevant : t.concat_rows(irr, d.irrelevant);
      first = false;
    }
  } else {
    rel = protos;
    irr = protos;
  }
  out.relevant_prototypes = t.val(rel);
  out.irrelevant_prototypes = t.val(irr);

  // --- query path ---
  std::vector<int> query_rows;
  std::vector<int> query_labels;
  for (const auto& q : ep.query) {
    query_rows.push_back(q.image_row);
    query_labels.push_back(q.label);
  }
  Var qfeats = model.backbone.encode_query(t, ds, query_rows);
  out.query_features = t.val(qfeats);

  const double tau = model.cfg.loss.tau;
  Var classify_against = rel;
  if (mode == Mode::Eval && model.cfg.sad.enabled &&
      model.cfg.sad.eval_prototype == EvalPrototype::Full) {
    classify_against = protos;
  }
  Var logit_var = cosine_logits(t, qfeats, classify_against, tau);
  out.logits = t.val(logit_var);

  // --- losses (adversarial term only when SAD contributes) ---
  Var cls = loss_cls(t, logit_var, query_labels);
  out.loss_cls = t.val(cls)(0, 0);
  double gamma = model.cfg.loss.gamma;
  Var total;
  if (model.cfg.sad.enabled && gamma > 0.0) {
    Var adv = loss_adv(t, cosine_logits(t, qfeats, irr, tau), query_labels);
    out.loss_adv = t.val(adv)(0, 0);
    total = loss_total(t, cls, adv, gamma);
  } else {
    out.loss_adv = 0.0;
    total = cls;
  }
  out.loss_total = t.val(total)(0, 0);
  out.loss_total_var = total;

  int correct = 0;
  for (Eigen::Index i = 0; i < out.logits.rows(); ++i) {
    Eigen::Index arg;
    out.logits.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == query_labels[static_cast<size_t>(i)]) correct++;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.logits.rows());
  return out;
}

}  // namespace bikop
