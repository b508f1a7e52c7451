#include "rcrank/pretrain.hpp"

#include <algorithm>
#include <fstream>

#include "rcrank/parallel.hpp"

namespace rcrank {

namespace {

PairKind pair_kind_for(OpKind op) {
  switch (op) {
    case OpKind::Scan:
    case OpKind::IndexScan:
    case OpKind::SubqueryScan:
    case OpKind::Insert:
    case OpKind::Update:
      return PairKind::Table;
    case OpKind::Filter:
      return PairKind::Predicate;
    case OpKind::HashJoin:
    case OpKind::NestedLoopJoin:
    case OpKind::MergeJoin:
      return PairKind::Operation;
    default:
      return PairKind::Column;
  }
}

}  // namespace

std::vector<AlignmentPair> match_critical_spans(const QueryRecord& rec) {
  std::vector<AlignmentPair> pairs;
  const auto& tokens = rec.sql.tokens;
  const auto& vocab = Vocabulary::builtin();
  for (int v = 0; v < rec.plan.node_count(); ++v) {
    const PlanNode& node = rec.plan.node(v);
    if (node.label.empty()) continue;
    TokenSeq label_tokens;
    try {
      label_tokens = tokenize_sql(node.label, vocab);
    } catch (const RcError&) {
      continue;
    }
    size_t m = label_tokens.tokens.size();
    if (m == 0 || m > tokens.size()) continue;
    int found = 0;
    for (size_t start = 0; start + m <= tokens.size() && found < 4; ++start) {
      bool match = true;
      for (size_t k = 0; k < m; ++k) {
        if (tokens[start + k].text != label_tokens.tokens[k].text) {
          match = false;
          break;
        }
      }
      if (!match) continue;
      AlignmentPair p;
      p.kind = pair_kind_for(node.op);
      p.sql_begin = static_cast<int>(start);
      p.sql_end = static_cast<int>(start + m);
      p.plan_node = v;
      pairs.push_back(p);
      ++found;
    }
  }
  // Numeric correspondences with the plan root: rows_returned <-> est_rows,
  // duration <-> total cost.
  AlignmentPair rows;
  rows.kind = PairKind::Numeric;
  rows.log_field = log_field_index("rows_returned");
  rows.plan_node = rec.plan.root();
  pairs.push_back(rows);
  AlignmentPair dur;
  dur.kind = PairKind::Numeric;
  dur.log_field = log_field_index("duration_ms");
  dur.plan_node = rec.plan.root();
  pairs.push_back(dur);
  return pairs;
}

namespace {

void random_sql_fallback(const QueryRecord& rec, Rng& rng, double mask_frac, MaskedSample& out) {
  out.masked_modality = Modality::SQL;
  size_t n = rec.sql.tokens.size();
  size_t k = std::max<size_t>(1, static_cast<size_t>(std::llround(mask_frac * static_cast<double>(n))));
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (size_t i = 0; i < std::min(k, n); ++i) out.sql_positions.push_back(order[i]);
  std::sort(out.sql_positions.begin(), out.sql_positions.end());
}

MaskedSample make_masked(const QueryRecord& rec, const std::vector<AlignmentPair>& pairs, Rng& rng, double mask_frac,
                         const Modality* forced) {
  MaskedSample out;
  std::vector<const AlignmentPair*> identifier, numeric;
  for (const AlignmentPair& p : pairs)
    (p.kind == PairKind::Numeric ? numeric : identifier).push_back(&p);

  auto select = [&](std::vector<const AlignmentPair*>& group) {
    std::vector<int> order(group.size());
    for (size_t i = 0; i < group.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    size_t k = std::max<size_t>(1, static_cast<size_t>(std::llround(mask_frac * static_cast<double>(group.size()))));
    order.resize(std::min(k, order.size()));
    std::vector<const AlignmentPair*> picked;
    for (int i : order) picked.push_back(group[static_cast<size_t>(i)]);
    return picked;
  };
  auto push_unique = [](std::vector<int>& v, int x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };

  Modality target;
  if (forced) {
    target = *forced;
  } else if (identifier.empty() && numeric.empty()) {
    random_sql_fallback(rec, rng, mask_frac, out);
    return out;
  } else if (identifier.empty()) {
    target = Modality::Log;
  } else if (numeric.empty()) {
    target = rng.bernoulli(0.5) ? Modality::SQL : Modality::Plan;  // the 50% side-choice coin
  } else if (rng.uniform() < 1.0 / 3.0) {  // even share across the three modalities
    target = Modality::Log;
  } else {
    target = rng.bernoulli(0.5) ? Modality::SQL : Modality::Plan;
  }

  out.masked_modality = target;
  switch (target) {
    case Modality::Log:
      for (const AlignmentPair* p : select(numeric)) push_unique(out.log_fields, p->log_field);
      std::sort(out.log_fields.begin(), out.log_fields.end());
      break;
    case Modality::SQL:
      if (identifier.empty()) {
        random_sql_fallback(rec, rng, mask_frac, out);
        break;
      }
      for (const AlignmentPair* p : select(identifier))
        for (int t = p->sql_begin; t < p->sql_end; ++t) push_unique(out.sql_positions, t);
      std::sort(out.sql_positions.begin(), out.sql_positions.end());
      break;
    case Modality::Plan:
      for (const AlignmentPair* p : select(identifier)) push_unique(out.plan_nodes, p->plan_node);
      std::sort(out.plan_nodes.begin(), out.plan_nodes.end());
      break;
    default:
      raise(ErrorCode::InvalidInput, "KPIs are reconstructed, never masked");
  }
  return out;
}

}  // namespace

MaskedSample mask_for_pretraining(const QueryRecord& rec, const std::vector<AlignmentPair>& pairs, Rng& rng,
                                  double mask_frac) {
  return make_masked(rec, pairs, rng, mask_frac, nullptr);
}

std::vector<Node*> aggregate_and_predict(Graph& g, const RCRankModel& model,
                                         const std::array<ModalEmbedding, kModalityCount>& embeds,
                                         const std::vector<int>& target_rows) {
  const ParamStore& params = model.params();
  Node* type_emb = g.param(params.at("agg/type_emb"));
  std::vector<Node*> parts;
  for (int m = 0; m < 3; ++m) {  // SQL, plan, log sequences
    Node* seq = embeds[static_cast<size_t>(m)].seq;
    if (!seq) raise(ErrorCode::ShapeError, "aggregator requires SQL, plan, and log embeddings");
    parts.push_back(g.add(seq, g.rows(type_emb, {m})));
  }
  Node* cat = g.concat(parts, 0);
  Node* agg = model.aggregator_layer().forward(g, cat, nullptr);
  Node* predicted = g.add(g.matmul(agg, g.param(params.at("agg/head_w"))), g.param(params.at("agg/head_b")));
  std::vector<Node*> out;
  out.reserve(target_rows.size());
  for (int row : target_rows) {
    if (row < 0 || row >= predicted->rows()) raise(ErrorCode::ShapeError, "target row out of range");
    out.push_back(g.rows(predicted, {row}));
  }
  return out;
}

PretrainLossParts build_pretrain_loss(Graph& g, const RCRankModel& model, const QueryRecord& rec,
                                      const MaskedSample& mask, bool include_kpi) {
  PretrainLossParts parts;
  parts.masked_modality = mask.masked_modality;
  EncodeOptions opts;
  opts.masked_sql = mask.sql();
  opts.masked_plan = mask.plan();
  opts.masked_log = mask.log();
  auto embeds = model.encode(g, rec, opts);

  int n_sql = embeds[0].seq->rows();
  int n_plan = embeds[1].seq->rows();

  // Target rows inside the concatenated sequence and their detached
  // embedding-space targets.
  std::vector<int> rows;
  std::vector<Tensor> targets;
  for (int p : mask.sql_positions) {
    if (p >= n_sql) continue;
    rows.push_back(p);
    targets.push_back(model.sql_token_target(rec.sql.tokens[static_cast<size_t>(p)].id));
  }
  for (int v : mask.plan_nodes) {
    rows.push_back(n_sql + v);
    targets.push_back(model.plan_node_target(rec.plan.node(v)));
  }
  if (!mask.log_fields.empty()) {
    rows.push_back(n_sql + n_plan);  // the single log position
    targets.push_back(model.log_embedding_target(model.normalized_log(rec.log_raw)));
  }

  Node* mask_term = nullptr;
  if (!rows.empty()) {
    std::vector<Node*> preds = aggregate_and_predict(g, model, embeds, rows);
    for (size_t i = 0; i < preds.size(); ++i) {
      Node* diff = g.sub(preds[i], g.constant(targets[i]));
      Node* sq = g.sum(g.mul(diff, diff));
      mask_term = mask_term ? g.add(mask_term, sq) : sq;
    }
    mask_term = g.scale(mask_term, 1.0 / static_cast<double>(preds.size()));
    parts.n_targets = static_cast<int>(preds.size());
  } else {
    mask_term = g.scalar(0.0);
  }

  parts.mask_term = mask_term->value().item();
  if (include_kpi) {
    Node* recon = model.decode_kpi(g, embeds[3].pooled);
    Node* diff = g.sub(recon, model.kpi_target(g, rec));
    Node* kpi_term = g.mean(g.mul(diff, diff));
    parts.kpi_term = kpi_term->value().item();
    parts.total = g.add(mask_term, kpi_term);
  } else {
    parts.total = mask_term;
  }
  return parts;
}

PretrainResult run_pretraining(RCRankModel& model, const Dataset& pool, const PretrainConfig& cfg) {
  if (pool.records.empty()) raise(ErrorCode::InsufficientData, "pretraining pool is empty");
  if (!model.initialized()) raise(ErrorCode::InvalidState, "model not initialized");
  const int n = static_cast<int>(pool.records.size());
  const int threads = resolve_threads(cfg.threads);
  constexpr int kChunks = 8;

  // Alignment pairs are a pure function of the record; compute once.
  std::vector<std::vector<AlignmentPair>> pairs(static_cast<size_t>(n));
  parallel_chunks(n, kChunks, threads, [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i)
      pairs[static_cast<size_t>(i)] = match_critical_spans(pool.records[static_cast<size_t>(i)]);
  });

  AdamConfig adam;
  adam.lr = cfg.lr;
  PretrainResult result;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, 7700 + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    PretrainEpochLog log;
    log.epoch = epoch;
    std::array<double, 3> mask_sums{};
    std::array<int64_t, 3> mask_counts{};
    double kpi_sum = 0.0;

    for (int start = 0; start < n; start += cfg.batch) {
      int count = std::min(cfg.batch, n - start);
      std::vector<GradAccum> chunk_grads;
      chunk_grads.reserve(kChunks);
      for (int c = 0; c < kChunks; ++c) chunk_grads.emplace_back(model.params());
      std::vector<PretrainLossParts> parts(static_cast<size_t>(count));

      parallel_chunks(count, kChunks, threads, [&](int chunk, int begin, int end) {
        for (int b = begin; b < end; ++b) {
          int idx = order[static_cast<size_t>(start + b)];
          Rng rec_rng(cfg.seed ^ Rng::splitmix(static_cast<uint64_t>(epoch) * 1000003ULL + static_cast<uint64_t>(idx)),
                      17);
          const QueryRecord& rec = pool.records[static_cast<size_t>(idx)];
          Graph g(true, &rec_rng);
          if (cfg.mask_all_modalities) {
            // Literal three-term variant: one masked pass per modality, summed.
            Node* total = nullptr;
            PretrainLossParts agg_parts;
            for (Modality m : {Modality::SQL, Modality::Plan, Modality::Log}) {
              MaskedSample sample = make_masked(rec, pairs[static_cast<size_t>(idx)], rec_rng, cfg.mask_frac, &m);
              PretrainLossParts p = build_pretrain_loss(g, model, rec, sample, m == Modality::Log);
              total = total ? g.add(total, p.total) : p.total;
              agg_parts.mask_term += p.mask_term;
              agg_parts.kpi_term = p.kpi_term;
            }
            agg_parts.total = total;
            agg_parts.masked_modality = Modality::SQL;
            parts[static_cast<size_t>(b)] = agg_parts;
            g.backward(total);
          } else {
            MaskedSample sample = mask_for_pretraining(rec, pairs[static_cast<size_t>(idx)], rec_rng, cfg.mask_frac);
            PretrainLossParts p = build_pretrain_loss(g, model, rec, sample);
            parts[static_cast<size_t>(b)] = p;
            g.backward(p.total);
          }
          g.accumulate_param_grads(chunk_grads[static_cast<size_t>(chunk)]);
        }
      });

      GradAccum total(model.params());
      for (auto& cg : chunk_grads) total.add(cg);
      total.scale(1.0 / static_cast<double>(count));
      adam_step(model.params(), total, adam);

      for (const auto& p : parts) {
        mask_sums[static_cast<size_t>(p.masked_modality)] += p.mask_term;
        mask_counts[static_cast<size_t>(p.masked_modality)]++;
        kpi_sum += p.kpi_term;
      }
    }
    log.l_sql = mask_counts[0] ? mask_sums[0] / static_cast<double>(mask_counts[0]) : 0.0;
    log.l_plan = mask_counts[1] ? mask_sums[1] / static_cast<double>(mask_counts[1]) : 0.0;
    log.l_log = mask_counts[2] ? mask_sums[2] / static_cast<double>(mask_counts[2]) : 0.0;
    log.l_kpis = kpi_sum / static_cast<double>(n);
    result.log.push_back(log);
  }
  return result;
}

void write_pretrain_log_csv(const PretrainResult& result, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCode::MissingFile, "cannot open for write: " + path);
  os << "epoch,l_sql,l_plan,l_log,l_kpis\n";
  for (const auto& row : result.log)
    os << row.epoch << ',' << row.l_sql << ',' << row.l_plan << ',' << row.l_log << ',' << row.l_kpis << '\n';
}

}  // namespace rcrank
