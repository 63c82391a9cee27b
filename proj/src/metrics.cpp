#include "medvid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "json.hpp"
#include "medvid/errors.hpp"
#include "medvid/localization.hpp"
#include "medvid/text.hpp"

namespace medvid::metrics {

using nlohmann::json;

double average_precision(const std::vector<std::string>& ranked,
                         const std::set<std::string>& relevant) {
    if (relevant.empty()) throw Error(errc::no_relevant, "query has no relevant documents");
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (relevant.count(ranked[i])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(relevant.size());
}

double precision_at_k(const std::vector<std::string>& ranked,
                      const std::set<std::string>& relevant, std::size_t k) {
    if (k == 0) throw Error(errc::usage_error, "k must be >= 1");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        if (relevant.count(ranked[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(k);
}

double recall_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                   std::size_t k) {
    if (k == 0) throw Error(errc::usage_error, "k must be >= 1");
    if (relevant.empty()) throw Error(errc::no_relevant, "query has no relevant documents");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        if (relevant.count(ranked[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
            std::optional<std::size_t> cutoff) {
    if (relevant.empty()) throw Error(errc::no_relevant, "query has no relevant documents");

    const std::size_t depth = cutoff ? std::min(*cutoff, ranked.size()) : ranked.size();
    double dcg = 0.0;
    for (std::size_t i = 0; i < depth; ++i)
        if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));

    const std::size_t ideal = cutoff ? std::min(*cutoff, relevant.size()) : relevant.size();
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));

    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

RetrievalReport evaluate_retrieval(const retrieval::RunFile& run,
                                   const std::vector<corpus::QrelEntry>& qrels,
                                   std::optional<std::size_t> ndcg_cutoff) {
    // ranked lists per query, in rank order
    std::map<std::string, std::vector<std::pair<int, std::string>>> by_query;
    for (const auto& entry : run) by_query[entry.query_id].emplace_back(entry.rank, entry.video_id);
    for (auto& [qid, list] : by_query) std::sort(list.begin(), list.end());

    std::map<std::string, std::set<std::string>> relevant;
    std::set<std::string> judged;
    for (const auto& entry : qrels) {
        judged.insert(entry.query_id);
        if (entry.relevance > 0) relevant[entry.query_id].insert(entry.video_id);
    }

    bool overlap = false;
    for (const auto& [qid, list] : by_query)
        if (judged.count(qid)) overlap = true;
    if (!overlap || relevant.empty())
        throw Error(errc::disjoint_evaluation, "run and qrels share no evaluable query");

    RetrievalReport report;
    for (const auto& [qid, rel] : relevant) {
        std::vector<std::string> ranked;
        if (auto it = by_query.find(qid); it != by_query.end())
            for (const auto& [rank, vid] : it->second) ranked.push_back(vid);

        report.map += average_precision(ranked, rel);
        report.r_at_5 += recall_at_k(ranked, rel, 5);
        report.r_at_10 += recall_at_k(ranked, rel, 10);
        report.p_at_5 += precision_at_k(ranked, rel, 5);
        report.p_at_10 += precision_at_k(ranked, rel, 10);
        report.ndcg += ndcg(ranked, rel, ndcg_cutoff);
        ++report.queries_evaluated;
    }
    report.queries_skipped = judged.size() - relevant.size();

    const auto n = static_cast<double>(report.queries_evaluated);
    report.map /= n;
    report.r_at_5 /= n;
    report.r_at_10 /= n;
    report.p_at_5 /= n;
    report.p_at_10 /= n;
    report.ndcg /= n;
    return report;
}

std::vector<StepMatch> match_steps(const std::vector<StepCaption>& pred,
                                   const std::vector<StepCaption>& gold) {
    struct Candidate {
        double iou;
        double gold_start;
        double pred_start;
        std::size_t gold_idx;
        std::size_t pred_idx;
    };
    std::vector<Candidate> candidates;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        for (std::size_t g = 0; g < gold.size(); ++g) {
            const double iou = localization::temporal_iou({pred[p].start_s, pred[p].end_s},
                                                          {gold[g].start_s, gold[g].end_s});
            if (iou > 0.0) candidates.push_back({iou, gold[g].start_s, pred[p].start_s, g, p});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return std::tuple(-a.iou, a.gold_start, a.pred_start, a.gold_idx, a.pred_idx) <
               std::tuple(-b.iou, b.gold_start, b.pred_start, b.gold_idx, b.pred_idx);
    });

    std::vector<bool> pred_used(pred.size(), false), gold_used(gold.size(), false);
    std::vector<StepMatch> matches;
    for (const auto& c : candidates) {
        if (pred_used[c.pred_idx] || gold_used[c.gold_idx]) continue;
        pred_used[c.pred_idx] = true;
        gold_used[c.gold_idx] = true;
        matches.push_back({c.pred_idx, c.gold_idx, c.iou});
    }
    return matches;
}

TokenF1 token_f1(std::string_view pred_text, std::string_view gold_text) {
    const auto pred_tokens = tokenize(pred_text);
    const auto gold_tokens = tokenize(gold_text);

    std::map<std::string, std::size_t> gold_counts;
    for (const auto& t : gold_tokens) ++gold_counts[t];
    std::size_t overlap = 0;
    for (const auto& t : pred_tokens) {
        if (auto it = gold_counts.find(t); it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }

    TokenF1 out;
    if (!pred_tokens.empty())
        out.precision = static_cast<double>(overlap) / static_cast<double>(pred_tokens.size());
    if (!gold_tokens.empty())
        out.recall = static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
    if (out.precision + out.recall > 0.0)
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

CaptionReport evaluate_steps(const std::vector<corpus::GoldStepSet>& pred_sets,
                             const std::vector<corpus::GoldStepSet>& gold_sets) {
    using Key = std::pair<std::string, std::string>;
    std::map<Key, const corpus::GoldStepSet*> preds;
    for (const auto& set : pred_sets) preds[{set.query_id, set.video_id}] = &set;

    bool any_covered = false;
    for (const auto& gold : gold_sets)
        if (preds.count({gold.query_id, gold.video_id})) any_covered = true;
    if (gold_sets.empty() || (!pred_sets.empty() && !any_covered))
        throw Error(errc::disjoint_evaluation, "no gold key has predictions");

    CaptionReport report;
    // global micro counts for the text metrics
    std::size_t overlap_total = 0, pred_tokens_total = 0, gold_tokens_total = 0;

    // deterministic key order
    std::map<Key, const corpus::GoldStepSet*> golds;
    for (const auto& set : gold_sets) golds[{set.query_id, set.video_id}] = &set;

    for (const auto& [key, gold] : golds) {
        static const std::vector<StepCaption> kNoSteps;
        const auto it = preds.find(key);
        const std::vector<StepCaption>& pred = it == preds.end() ? kNoSteps : it->second->steps;

        const auto matches = match_steps(pred, gold->steps);

        std::vector<bool> pred_matched(pred.size(), false);
        std::vector<double> gold_best(gold->steps.size(), 0.0);
        std::size_t at_03 = 0, at_05 = 0, at_07 = 0;
        for (const auto& m : matches) {
            pred_matched[m.pred_idx] = true;
            gold_best[m.gold_idx] = m.iou;
            if (m.iou >= 0.3) ++at_03;
            if (m.iou >= 0.5) ++at_05;
            if (m.iou >= 0.7) ++at_07;
        }

        // text metrics: overlaps only on matched pairs; every token counts
        // into its side's denominator
        for (std::size_t p = 0; p < pred.size(); ++p)
            pred_tokens_total += tokenize(pred[p].text).size();
        for (const auto& step : gold->steps) gold_tokens_total += tokenize(step.text).size();
        for (const auto& m : matches) {
            const auto pred_tokens = tokenize(pred[m.pred_idx].text);
            std::map<std::string, std::size_t> gold_counts;
            for (const auto& t : tokenize(gold->steps[m.gold_idx].text)) ++gold_counts[t];
            for (const auto& t : pred_tokens) {
                if (auto itc = gold_counts.find(t); itc != gold_counts.end() && itc->second > 0) {
                    --itc->second;
                    ++overlap_total;
                }
            }
        }

        if (!gold->steps.empty()) {
            const auto n_gold = static_cast<double>(gold->steps.size());
            report.iou_at_03 += static_cast<double>(at_03) / n_gold;
            report.iou_at_05 += static_cast<double>(at_05) / n_gold;
            report.iou_at_07 += static_cast<double>(at_07) / n_gold;
            double iou_sum = 0.0;
            for (double v : gold_best) iou_sum += v;
            report.m_iou += iou_sum / n_gold;
        }
        ++report.keys_evaluated;
    }

    const auto keys = static_cast<double>(report.keys_evaluated);
    report.iou_at_03 /= keys;
    report.iou_at_05 /= keys;
    report.iou_at_07 /= keys;
    report.m_iou /= keys;

    if (pred_tokens_total > 0)
        report.precision = static_cast<double>(overlap_total) / static_cast<double>(pred_tokens_total);
    if (gold_tokens_total > 0)
        report.recall = static_cast<double>(overlap_total) / static_cast<double>(gold_tokens_total);
    if (report.precision + report.recall > 0.0)
        report.f_score =
            2.0 * report.precision * report.recall / (report.precision + report.recall);
    return report;
}

namespace {

std::string table_row(const char* name, double value) {
    std::string out = name;
    while (out.size() < 12) out += ' ';
    out += format_fixed(value, 6);
    out += "  (x100: " + format_fixed(value * 100.0, 4) + ")\n";
    return out;
}

}  // namespace

std::string retrieval_report_json(const RetrievalReport& report) {
    const json doc = {{"metric_profile", std::string(kMetricProfile)},
                      {"map", report.map},
                      {"r_at_5", report.r_at_5},
                      {"r_at_10", report.r_at_10},
                      {"p_at_5", report.p_at_5},
                      {"p_at_10", report.p_at_10},
                      {"ndcg", report.ndcg},
                      {"queries_evaluated", report.queries_evaluated},
                      {"queries_skipped", report.queries_skipped}};
    return doc.dump(2) + "\n";
}

std::string retrieval_report_table(const RetrievalReport& report) {
    std::string out = "retrieval metrics (profile " + std::string(kMetricProfile) + ", " +
                      std::to_string(report.queries_evaluated) + " queries)\n";
    out += table_row("MAP", report.map);
    out += table_row("R@5", report.r_at_5);
    out += table_row("R@10", report.r_at_10);
    out += table_row("P@5", report.p_at_5);
    out += table_row("P@10", report.p_at_10);
    out += table_row("nDCG", report.ndcg);
    return out;
}

std::string caption_report_json(const CaptionReport& report) {
    const json doc = {{"metric_profile", std::string(kMetricProfile)},
                      {"precision", report.precision},
                      {"recall", report.recall},
                      {"f_score", report.f_score},
                      {"iou_at_03", report.iou_at_03},
                      {"iou_at_05", report.iou_at_05},
                      {"iou_at_07", report.iou_at_07},
                      {"m_iou", report.m_iou},
                      {"keys_evaluated", report.keys_evaluated}};
    return doc.dump(2) + "\n";
}

std::string caption_report_table(const CaptionReport& report) {
    std::string out = "step captioning metrics (profile " + std::string(kMetricProfile) + ", " +
                      std::to_string(report.keys_evaluated) + " keys)\n";
    out += table_row("Precision", report.precision);
    out += table_row("Recall", report.recall);
    out += table_row("F-Score", report.f_score);
    out += table_row("IoU@3", report.iou_at_03);
    out += table_row("IoU@5", report.iou_at_05);
    out += table_row("IoU@7", report.iou_at_07);
    out += table_row("mIoU", report.m_iou);
    return out;
}

}  // namespace medvid::metrics
