#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/corpus.hpp"
#include "medvid/retrieval.hpp"
#include "medvid/types.hpp"

namespace medvid::metrics {

// Flags the interpretation choices baked into these implementations.
inline constexpr std::string_view kMetricProfile = "medvidqa-kit-v1";

struct RetrievalReport {
    double map = 0.0;
    double r_at_5 = 0.0;
    double r_at_10 = 0.0;
    double p_at_5 = 0.0;
    double p_at_10 = 0.0;
    double ndcg = 0.0;
    std::size_t queries_evaluated = 0;
    std::size_t queries_skipped = 0;  // judged but no relevant docs
};

struct CaptionReport {
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    double iou_at_03 = 0.0;
    double iou_at_05 = 0.0;
    double iou_at_07 = 0.0;
    double m_iou = 0.0;
    std::size_t keys_evaluated = 0;
};

// Sum over hit ranks i of (hits<=i / i), divided by |relevant|. Raises
// errc::no_relevant on an empty relevant set.
double average_precision(const std::vector<std::string>& ranked,
                         const std::set<std::string>& relevant);

// P@k divides by k even when fewer documents were retrieved.
double precision_at_k(const std::vector<std::string>& ranked,
                      const std::set<std::string>& relevant, std::size_t k);
double recall_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                   std::size_t k);

// Binary gains, DCG = sum 1/log2(rank+1); IDCG over the ideal ordering of
// all relevant docs (truncated at cutoff when given).
double ndcg(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
            std::optional<std::size_t> cutoff = std::nullopt);

// Macro-averaged over queries with at least one relevant judgment; judged
// queries missing from the run score 0 everywhere. No overlap between run
// and qrels queries raises errc::disjoint_evaluation.
RetrievalReport evaluate_retrieval(const retrieval::RunFile& run,
                                   const std::vector<corpus::QrelEntry>& qrels,
                                   std::optional<std::size_t> ndcg_cutoff = std::nullopt);

struct StepMatch {
    std::size_t pred_idx = 0;
    std::size_t gold_idx = 0;
    double iou = 0.0;
};

// Greedy one-to-one matching by descending temporal IoU, ties by earlier
// gold start; zero-IoU pairs never match.
std::vector<StepMatch> match_steps(const std::vector<StepCaption>& pred,
                                   const std::vector<StepCaption>& gold);

struct TokenF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Multiset overlap of lowercase whitespace tokens; 0/0 -> 0.
TokenF1 token_f1(std::string_view pred_text, std::string_view gold_text);

// Evaluated over the gold keys (query_id, video_id); predictions for
// unjudged keys are ignored, gold keys without predictions count as
// misses. Text P/R/F micro-averaged globally (unmatched predictions in the
// precision denominator, unmatched golds in the recall denominator);
// IoU@{0.3,0.5,0.7} and mIoU computed per key against the gold step count,
// then averaged over keys. Raises errc::disjoint_evaluation when no gold
// key has predictions.
CaptionReport evaluate_steps(const std::vector<corpus::GoldStepSet>& pred_sets,
                             const std::vector<corpus::GoldStepSet>& gold_sets);

// Report serialization: structured JSON (exact field names) and a
// human-readable table with values x100 to 4 decimals.
std::string retrieval_report_json(const RetrievalReport& report);
std::string retrieval_report_table(const RetrievalReport& report);
std::string caption_report_json(const CaptionReport& report);
std::string caption_report_table(const CaptionReport& report);

}  // namespace medvid::metrics
