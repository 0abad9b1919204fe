#include "vlpre/eval.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vlpre/ops.hpp"

namespace vlpre {

namespace op = vlpre::ops;

void EvalPool::validate() const {
  if (images.empty() || captions.empty())
    throw std::invalid_argument("eval pool: needs at least one image and one caption");
  if (caption_to_image.size() != captions.size())
    throw std::invalid_argument("eval pool: caption_to_image size mismatch");
  if (image_to_captions.size() != images.size())
    throw std::invalid_argument("eval pool: image_to_captions size mismatch");
  std::vector<char> seen(captions.size(), 0);
  for (size_t i = 0; i < image_to_captions.size(); ++i) {
    if (image_to_captions[i].empty())
      throw std::invalid_argument("eval pool: image " + std::to_string(i) + " has no caption");
    for (int c : image_to_captions[i]) {
      if (c < 0 || c >= num_captions() || caption_to_image[c] != static_cast<int>(i))
        throw std::invalid_argument("eval pool: inconsistent ground truth for image " +
                                    std::to_string(i));
      seen[c] = 1;
    }
  }
  for (size_t c = 0; c < seen.size(); ++c)
    if (!seen[c])
      throw std::invalid_argument("eval pool: caption " + std::to_string(c) + " unassigned");
}

EvalPool build_pool(const Dataset& ds, const Vocab& vocab, const ModelConfig& cfg) {
  EvalPool pool;
  for (const auto& rec : ds.records) {
    const int img_index = static_cast<int>(pool.images.size());
    pool.images.push_back(corpus::visual_tokens(rec, ds.features));
    std::vector<std::string> texts =
        rec.captions.empty() ? std::vector<std::string>{rec.caption} : rec.captions;
    std::vector<int> owned;
    for (const auto& t : texts) {
      owned.push_back(static_cast<int>(pool.captions.size()));
      pool.captions.push_back(tokenize(t, vocab, cfg.max_text_len));
      pool.caption_to_image.push_back(img_index);
    }
    pool.image_to_captions.push_back(std::move(owned));
  }
  pool.validate();
  return pool;
}

std::string to_string(RetrievalDirection d) {
  return d == RetrievalDirection::image_retrieval ? "image_retrieval" : "sentence_retrieval";
}

ScoreMatrix score_all(const EvalPool& pool, const ModelParams& params, int batch_size) {
  pool.validate();
  if (batch_size < 1) throw std::invalid_argument("score_all: batch_size must be >= 1");
  // detached copy: scoring never builds a gradient graph
  ModelParams p = params.eval_copy();
  ScoreMatrix m;
  m.rows = pool.num_images();
  m.cols = pool.num_captions();
  m.values.assign(static_cast<size_t>(m.rows) * m.cols, 0.0);
  Rng rng(0);  // eval mode never draws from it
  const long total = static_cast<long>(m.rows) * m.cols;
  for (long start = 0; start < total; start += batch_size) {
    const long end = std::min(total, start + batch_size);
    for (long k = start; k < end; ++k) {
      const int i = static_cast<int>(k / m.cols);
      const int j = static_cast<int>(k % m.cols);
      auto joint = model::build_joint(pool.captions[j], pool.images[i], p, Mode::eval, rng);
      auto h = model::encode(joint.emb, joint.attention_mask, p, Mode::eval, rng);
      auto raw = model::itm_raw(op::gather_rows(h, {0}), p);
      m.values[static_cast<size_t>(k)] = raw.item();
    }
  }
  return m;
}

namespace {

// 1-based rank of entry `target` within `n` scores fetched by `score`,
// descending, ties broken toward the lower index.
int rank_of(int target, int n, const std::function<double(int)>& score) {
  const double s = score(target);
  int better = 0;
  for (int i = 0; i < n; ++i) {
    const double si = score(i);
    if (si > s || (si == s && i < target)) ++better;
  }
  return better + 1;
}

}  // namespace

double recall_at_k(const ScoreMatrix& m, const EvalPool& pool, int K,
                   RetrievalDirection direction) {
  if (m.rows != pool.num_images() || m.cols != pool.num_captions())
    throw std::invalid_argument("recall_at_k: matrix shape does not match pool");
  if (K < 1) throw std::invalid_argument("recall_at_k: K must be >= 1");
  if (direction == RetrievalDirection::image_retrieval) {
    if (K > m.rows)
      throw std::invalid_argument("recall_at_k: K=" + std::to_string(K) + " exceeds image pool (" +
                                  std::to_string(m.rows) + ")");
    int hits = 0;
    for (int j = 0; j < m.cols; ++j) {
      auto col = [&](int i) { return m.at(i, j); };
      if (rank_of(pool.caption_to_image[j], m.rows, col) <= K) ++hits;
    }
    return static_cast<double>(hits) / m.cols;
  }
  if (K > m.cols)
    throw std::invalid_argument("recall_at_k: K=" + std::to_string(K) + " exceeds caption pool (" +
                                std::to_string(m.cols) + ")");
  int hits = 0;
  for (int i = 0; i < m.rows; ++i) {
    auto row = [&](int j) { return m.at(i, j); };
    int best_rank = m.cols + 1;
    for (int c : pool.image_to_captions[i]) best_rank = std::min(best_rank, rank_of(c, m.cols, row));
    if (best_rank <= K) ++hits;
  }
  return static_cast<double>(hits) / m.rows;
}

EvalReport report_from_matrix(const ScoreMatrix& m, const EvalPool& pool,
                              const std::vector<int>& ks, const std::string& checkpoint_id) {
  if (ks.empty()) throw std::invalid_argument("eval report: needs at least one K");
  EvalReport r;
  r.ks = ks;
  r.pool_images = pool.num_images();
  r.pool_captions = pool.num_captions();
  r.checkpoint = checkpoint_id;
  for (int k : ks) {
    r.image_retrieval.push_back(recall_at_k(m, pool, k, RetrievalDirection::image_retrieval));
    r.sentence_retrieval.push_back(recall_at_k(m, pool, k, RetrievalDirection::sentence_retrieval));
  }
  return r;
}

EvalReport eval_report(const EvalPool& pool, const ModelParams& params,
                       const std::vector<int>& ks, const std::string& checkpoint_id) {
  return report_from_matrix(score_all(pool, params), pool, ks, checkpoint_id);
}

std::string EvalReport::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (size_t i = 0; i < ks.size(); ++i) {
    entries.push_back({{"direction", "image_retrieval"},
                       {"K", ks[i]},
                       {"recall", image_retrieval[i]},
                       {"pool_size", pool_images},
                       {"checkpoint", checkpoint}});
  }
  for (size_t i = 0; i < ks.size(); ++i) {
    entries.push_back({{"direction", "sentence_retrieval"},
                       {"K", ks[i]},
                       {"recall", sentence_retrieval[i]},
                       {"pool_size", pool_captions},
                       {"checkpoint", checkpoint}});
  }
  nlohmann::json j{{"results", entries},
                   {"pool_images", pool_images},
                   {"pool_captions", pool_captions}};
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(20) << "direction";
  for (int k : ks) out << std::right << std::setw(10) << ("R@" + std::to_string(k));
  out << "\n";
  auto row = [&](const std::string& name, const std::vector<double>& vals) {
    out << std::left << std::setw(20) << name;
    for (double v : vals)
      out << std::right << std::setw(10) << std::fixed << std::setprecision(4) << v;
    out << "\n";
  };
  row("image_retrieval", image_retrieval);
  row("sentence_retrieval", sentence_retrieval);
  return out.str();
}

}  // namespace vlpre
