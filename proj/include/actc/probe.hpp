#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "actc/ctc.hpp"
#include "actc/model.hpp"
#include "actc/numeric.hpp"
#include "actc/tensor.hpp"

namespace actc {

enum class Category { epsilon, forward, present, backward, off_target };

inline const char* category_name(Category c) {
  switch (c) {
    case Category::epsilon: return "epsilon";
    case Category::forward: return "forward";
    case Category::present: return "present";
    case Category::backward: return "backward";
    case Category::off_target: return "off_target";
  }
  return "?";
}

// What one attention head's context embedding classifies to at one output
// step, and where that token sits relative to the step in the transcript.
struct HeadClassification {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;
  std::size_t token = 0;
  double posterior = 0.0;
  Category category = Category::epsilon;
  bool has_match = false;
  std::size_t matched_position = 0;
};

struct ProbeReport {
  std::string utterance_id;
  std::vector<std::size_t> targets;      // transcript tokens, no sos/eos
  std::vector<std::size_t> predictions;  // decoder argmax per step
  std::size_t layers = 0;
  std::size_t heads = 0;
  // step-major grid: cell(step, layer, head)
  std::vector<HeadClassification> grid;

  const HeadClassification& cell(std::size_t step, std::size_t layer,
                                 std::size_t head) const {
    return grid.at((step * layers + layer) * heads + head);
  }
};

struct LayerStats {
  std::size_t layer = 0;
  double mean_unique = 0.0;
  double std_unique = 0.0;
};

// d = sum_t w_t h_t over raw encoder rows (no value projection).
inline std::vector<double> attention_context(const std::vector<double>& weights_row,
                                             const EncoderOutput& enc) {
  if (weights_row.size() != enc.h.rows())
    throw std::invalid_argument("attention_context: length mismatch");
  double sum = 0.0;
  for (double w : weights_row) {
    if (w < 0.0)
      throw std::invalid_argument("attention_context: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-4)
    throw std::invalid_argument("attention_context: weights do not sum to 1");
  std::vector<double> d(enc.h.cols(), 0.0);
  for (std::size_t t = 0; t < enc.h.rows(); ++t)
    for (std::size_t j = 0; j < enc.h.cols(); ++j)
      d[j] += weights_row[t] * enc.h(t, j);
  return d;
}

inline std::vector<double> head_posterior(const CtcClassifier& cls,
                                          const std::vector<double>& d) {
  return softmax_row(linear_map(cls.W.value, cls.b.value, d));
}

inline std::pair<std::size_t, double> classify_head(
    const std::vector<double>& posterior) {
  std::size_t tok = argmax_lowest(posterior);
  return {tok, posterior[tok]};
}

// Aligns a head-classified token to the transcript: nearest occurrence to
// the current step, ties toward the larger position.
inline HeadClassification categorize_prediction(
    std::size_t token, std::size_t step, const std::vector<std::size_t>& targets,
    std::size_t blank_id) {
  if (targets.empty())
    throw std::invalid_argument("categorize_prediction: empty targets");
  HeadClassification hc;
  hc.step = step;
  hc.token = token;
  if (token == blank_id) {
    hc.category = Category::epsilon;
    return hc;
  }
  long best_dist = -1;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (targets[j] != token) continue;
    long dist = std::labs(static_cast<long>(j) - static_cast<long>(step));
    if (best_dist < 0 || dist < best_dist ||
        (dist == best_dist && j > hc.matched_position)) {
      best_dist = dist;
      hc.matched_position = j;
      hc.has_match = true;
    }
  }
  if (!hc.has_match) {
    hc.category = Category::off_target;
  } else if (hc.matched_position > step) {
    hc.category = Category::forward;
  } else if (hc.matched_position == step) {
    hc.category = Category::present;
  } else {
    hc.category = Category::backward;
  }
  return hc;
}

// Runs the full diagnostic over one utterance's forward output.
inline ProbeReport probe_utterance(const ForwardOutput& fwd,
                                   const CtcClassifier& cls,
                                   const std::vector<std::size_t>& targets,
                                   const std::string& utterance_id = "") {
  const AttentionRecord& att = fwd.attention;
  if (att.weights.empty())
    throw std::invalid_argument("probe_utterance: no attention records");
  ProbeReport rep;
  rep.utterance_id = utterance_id;
  rep.targets = targets;
  rep.layers = att.layers;
  rep.heads = att.heads;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < fwd.decoder_logits.cols(); ++c)
      if (fwd.decoder_logits(i, c) > fwd.decoder_logits(i, best)) best = c;
    rep.predictions.push_back(best);
  }
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t l = 0; l < att.layers; ++l)
      for (std::size_t h = 0; h < att.heads; ++h) {
        const Tensor& w = att.at(l, h);
        std::vector<double> row(w.data.begin() + i * w.cols(),
                                w.data.begin() + (i + 1) * w.cols());
        auto d = attention_context(row, fwd.encoder_out);
        auto [tok, post] = classify_head(head_posterior(cls, d));
        HeadClassification hc =
            categorize_prediction(tok, i, targets, cls.blank_id);
        hc.layer = l;
        hc.head = h;
        hc.posterior = post;
        rep.grid.push_back(hc);
      }
  return rep;
}

// Mean and population std of per-utterance unique-token counts per layer,
// counted across all heads and steps (blank included).
inline std::vector<LayerStats> layer_unique_token_stats(
    const std::vector<ProbeReport>& reports) {
  if (reports.empty())
    throw std::invalid_argument("layer_unique_token_stats: no reports");
  std::size_t layers = reports[0].layers;
  std::vector<LayerStats> out(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<double> counts;
    for (const ProbeReport& r : reports) {
      std::set<std::size_t> uniq;
      for (std::size_t i = 0; i < r.targets.size(); ++i)
        for (std::size_t h = 0; h < r.heads; ++h)
          uniq.insert(r.cell(i, l, h).token);
      counts.push_back(static_cast<double>(uniq.size()));
    }
    double mean = 0.0;
    for (double c : counts) mean += c;
    mean /= static_cast<double>(counts.size());
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    var /= static_cast<double>(counts.size());
    out[l] = {l, mean, std::sqrt(var)};
  }
  return out;
}

inline char category_marker(Category c) {
  switch (c) {
    case Category::forward: return '>';
    case Category::present: return '=';
    case Category::backward: return '<';
    case Category::off_target: return '?';
    case Category::epsilon: return ' ';
  }
  return '?';
}

// Tab-separated grid in the layer/head layout: one row per target step,
// a ground-truth and a prediction column, then one column per head. Cells
// classified as blank, or below the posterior threshold, render empty;
// other cells carry the token name plus a category marker.
inline std::string render_report(
    const ProbeReport& rep, double posterior_threshold,
    const std::function<std::string(std::size_t)>& token_name) {
  if (posterior_threshold < 0.0 || posterior_threshold > 1.0)
    throw std::invalid_argument("render_report: threshold outside [0,1]");
  std::ostringstream os;
  os << "step\tground_truth\tprediction";
  for (std::size_t l = 0; l < rep.layers; ++l)
    for (std::size_t h = 0; h < rep.heads; ++h)
      os << "\tL" << l << "H" << h;
  os << "\n";
  for (std::size_t i = 0; i < rep.targets.size(); ++i) {
    os << i << "\t" << token_name(rep.targets[i]) << "\t"
       << token_name(rep.predictions[i]);
    for (std::size_t l = 0; l < rep.layers; ++l)
      for (std::size_t h = 0; h < rep.heads; ++h) {
        const HeadClassification& hc = rep.cell(i, l, h);
        os << "\t";
        if (hc.category == Category::epsilon ||
            hc.posterior < posterior_threshold)
          continue;
        os << token_name(hc.token) << category_marker(hc.category);
      }
    os << "\n";
  }
  return os.str();
}

}  // namespace actc
