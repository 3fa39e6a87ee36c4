#include "cmx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace cmx {

std::vector<int> retrieval_ranks(const Matrix& queries, const Matrix& candidates) {
    if (queries.rows != candidates.rows) throw DimensionError("retrieval_ranks: banks must pair by row");
    if (queries.cols != candidates.cols) throw DimensionError("retrieval_ranks: embedding dimensions differ");
    if (queries.rows == 0) throw DataError("retrieval_ranks: empty retrieval set");

    const int n = queries.rows;
    std::vector<int> ranks(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto q = queries.row(i);
        const double true_score = dot(q, candidates.row(i));
        // Rank = 1 + candidates strictly better + earlier-indexed ties.
        int rank = 1;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double s = dot(q, candidates.row(j));
            if (s > true_score || (s == true_score && j < i)) ++rank;
        }
        ranks[static_cast<std::size_t>(i)] = rank;
    }
    return ranks;
}

RetrievalReport retrieval_metrics(const Matrix& z_a, const Matrix& z_b, Direction direction) {
    const Matrix& queries = direction == Direction::kAToB ? z_a : z_b;
    const Matrix& candidates = direction == Direction::kAToB ? z_b : z_a;
    std::vector<int> ranks = retrieval_ranks(queries, candidates);

    RetrievalReport report;
    report.direction = direction;
    report.n = static_cast<int>(ranks.size());
    double sum = 0.0;
    for (int r : ranks) {
        if (r <= 1) report.r1 += 1.0;
        if (r <= 5) report.r5 += 1.0;
        if (r <= 10) report.r10 += 1.0;
        sum += r;
    }
    report.r1 /= report.n;
    report.r5 /= report.n;
    report.r10 /= report.n;
    report.mean_rank = sum / report.n;
    std::sort(ranks.begin(), ranks.end());
    const std::size_t mid = ranks.size() / 2;
    report.median_rank =
        ranks.size() % 2 == 1 ? ranks[mid] : 0.5 * (ranks[mid - 1] + ranks[mid]);
    return report;
}

CodewordStats::CodewordStats(int codewords, int labels) : codebook_size(codewords), label_count(labels) {
    occurrence_a.assign(static_cast<std::size_t>(codewords), 0);
    occurrence_b.assign(static_cast<std::size_t>(codewords), 0);
    label_cooc_a.assign(static_cast<std::size_t>(codewords), std::vector<std::int64_t>(static_cast<std::size_t>(labels), 0));
    label_cooc_b.assign(static_cast<std::size_t>(codewords), std::vector<std::int64_t>(static_cast<std::size_t>(labels), 0));
    token_cooc.resize(static_cast<std::size_t>(codewords));
}

void accumulate(CodewordStats& stats, const CodeAssignment& assignment, const PairedInstance& instance,
                const std::vector<Concept>& concepts) {
    const bool is_a = assignment.modality == 'A';
    auto& occurrence = is_a ? stats.occurrence_a : stats.occurrence_b;
    auto& label_cooc = is_a ? stats.label_cooc_a : stats.label_cooc_b;
    const auto& pos_labels = is_a ? instance.labels_a : instance.labels_b;
    if (assignment.codes.size() != pos_labels.size())
        throw DimensionError("accumulate: assignment length does not match the instance sequence");

    for (std::size_t pos = 0; pos < assignment.codes.size(); ++pos) {
        const int v = assignment.codes[pos];
        if (v < 0 || v >= stats.codebook_size) throw DimensionError("accumulate: codeword index out of range");
        ++occurrence[static_cast<std::size_t>(v)];
        ++label_cooc[static_cast<std::size_t>(v)][static_cast<std::size_t>(instance.instance_label)];
        if (!is_a) {
            const std::string& token = concepts[static_cast<std::size_t>(pos_labels[pos])].token;
            ++stats.token_cooc[static_cast<std::size_t>(v)][token];
            ++stats.token_occurrence[token];
        }
    }
}

CodewordStats collect_stats(const PairedDataset& ds, const std::vector<CodeAssignment>& assign_a,
                            const std::vector<CodeAssignment>& assign_b, int codebook_size) {
    CodewordStats stats(codebook_size, ds.config.concepts);
    if (assign_a.size() != ds.instances.size() || assign_b.size() != ds.instances.size())
        throw DimensionError("collect_stats: assignment count does not match dataset");
    for (std::size_t i = 0; i < ds.instances.size(); ++i) {
        accumulate(stats, assign_a[i], ds.instances[i], ds.concepts);
        accumulate(stats, assign_b[i], ds.instances[i], ds.concepts);
    }
    return stats;
}

ConditionalProbability conditional_probability(const CodewordStats& stats, char modality) {
    const auto& occurrence = modality == 'A' ? stats.occurrence_a : stats.occurrence_b;
    const auto& cooc = modality == 'A' ? stats.label_cooc_a : stats.label_cooc_b;

    ConditionalProbability cp;
    for (int v = 0; v < stats.codebook_size; ++v)
        if (occurrence[static_cast<std::size_t>(v)] > 0) cp.codewords.push_back(v);

    cp.p = Matrix(stats.label_count, static_cast<int>(cp.codewords.size()));
    for (std::size_t col = 0; col < cp.codewords.size(); ++col) {
        const int v = cp.codewords[col];
        const double occ = static_cast<double>(occurrence[static_cast<std::size_t>(v)]);
        for (int label = 0; label < stats.label_count; ++label)
            cp.p.at(label, static_cast<int>(col)) =
                static_cast<double>(cooc[static_cast<std::size_t>(v)][static_cast<std::size_t>(label)]) / occ;
    }
    return cp;
}

namespace {

std::array<LabelHypothesis, 2> top_two(const std::vector<std::pair<std::string, double>>& scored) {
    std::array<LabelHypothesis, 2> out;
    for (const auto& [name, score] : scored) {
        if (score > out[0].score) {
            out[1] = out[0];
            out[0] = {name, score};
        } else if (score > out[1].score) {
            out[1] = {name, score};
        }
    }
    return out;
}

}  // namespace

std::vector<CorrespondenceRow> correspondence_table(const CodewordStats& stats,
                                                    const std::vector<std::string>& label_names) {
    if (static_cast<int>(label_names.size()) != stats.label_count)
        throw DimensionError("correspondence_table: label name count mismatch");

    std::vector<CorrespondenceRow> rows;
    for (int v = 0; v < stats.codebook_size; ++v) {
        const std::int64_t occ_a = stats.occurrence_a[static_cast<std::size_t>(v)];
        if (occ_a == 0) continue;  // never activated on the label side
        CorrespondenceRow row;
        row.code = v;
        row.occurrence = occ_a;

        std::vector<std::pair<std::string, double>> label_scores;
        for (int label = 0; label < stats.label_count; ++label) {
            const std::int64_t c = stats.label_cooc_a[static_cast<std::size_t>(v)][static_cast<std::size_t>(label)];
            if (c > 0)
                label_scores.emplace_back(label_names[static_cast<std::size_t>(label)],
                                          100.0 * static_cast<double>(c) / static_cast<double>(occ_a));
        }
        row.labels = top_two(label_scores);

        const std::int64_t occ_b = stats.occurrence_b[static_cast<std::size_t>(v)];
        std::vector<std::pair<std::string, double>> token_scores;
        if (occ_b > 0) {
            for (const auto& [token, c] : stats.token_cooc[static_cast<std::size_t>(v)]) {
                const double precision = static_cast<double>(c) / static_cast<double>(occ_b);
                const double recall = static_cast<double>(c) / static_cast<double>(stats.token_occurrence.at(token));
                token_scores.emplace_back(token, 100.0 * 2.0 * precision * recall / (precision + recall));
            }
        }
        row.tokens = top_two(token_scores);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CorrespondenceRow& a, const CorrespondenceRow& b) { return a.labels[0].score > b.labels[0].score; });
    return rows;
}

LocalizationMask localize(const CodeAssignment& assignment, int codeword, int codebook_size) {
    if (codeword < 0 || codeword >= codebook_size)
        throw DimensionError("localize: codeword " + std::to_string(codeword) + " outside codebook of size " +
                             std::to_string(codebook_size));
    LocalizationMask mask;
    mask.instance_id = assignment.instance_id;
    mask.modality = assignment.modality;
    mask.grid = assignment.grid;
    mask.mask.reserve(assignment.codes.size());
    for (int code : assignment.codes) mask.mask.push_back(code == codeword);
    return mask;
}

double partition_statistic(const CodewordStats& stats, double threshold) {
    if (threshold <= 0.5 || threshold > 1.0) throw ConfigError("partition_statistic: threshold must be in (0.5, 1]");
    int activated = 0;
    int dominated = 0;
    for (int v = 0; v < stats.codebook_size; ++v) {
        const double a = static_cast<double>(stats.occurrence_a[static_cast<std::size_t>(v)]);
        const double b = static_cast<double>(stats.occurrence_b[static_cast<std::size_t>(v)]);
        if (a + b == 0.0) continue;
        ++activated;
        if (std::max(a, b) / (a + b) > threshold) ++dominated;
    }
    if (activated == 0) throw DataError("partition_statistic: no activated codewords");
    return static_cast<double>(dominated) / static_cast<double>(activated);
}

double label_agreement(const CodewordStats& stats) {
    int both = 0;
    int agree = 0;
    for (int v = 0; v < stats.codebook_size; ++v) {
        if (stats.occurrence_a[static_cast<std::size_t>(v)] == 0 || stats.occurrence_b[static_cast<std::size_t>(v)] == 0)
            continue;
        ++both;
        const auto& ca = stats.label_cooc_a[static_cast<std::size_t>(v)];
        const auto& cb = stats.label_cooc_b[static_cast<std::size_t>(v)];
        const auto arg_a = std::max_element(ca.begin(), ca.end()) - ca.begin();
        const auto arg_b = std::max_element(cb.begin(), cb.end()) - cb.begin();
        if (arg_a == arg_b) ++agree;
    }
    if (both == 0) throw DataError("label_agreement: no codeword activated in both modalities");
    return static_cast<double>(agree) / static_cast<double>(both);
}

namespace {

std::string fmt(double v, int decimals) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(decimals);
    os << v;
    return os.str();
}

const char* direction_name(Direction d) { return d == Direction::kAToB ? "A->B" : "B->A"; }

}  // namespace

std::string retrieval_csv(const std::vector<RetrievalReport>& reports) {
    std::ostringstream os;
    os << "# format: retrieval-v1\n";
    os << "direction,n,r@1,r@5,r@10,median_rank,mean_rank\n";
    for (const auto& r : reports) {
        os << direction_name(r.direction) << ',' << r.n << ',' << fmt(r.r1, 4) << ',' << fmt(r.r5, 4) << ','
           << fmt(r.r10, 4) << ',' << fmt(r.median_rank, 1) << ',' << fmt(r.mean_rank, 2) << '\n';
    }
    return os.str();
}

std::string conditional_probability_csv(const ConditionalProbability& cp,
                                        const std::vector<std::string>& label_names) {
    std::ostringstream os;
    os << "# format: conditional-probability-v1\n";
    os << "label";
    for (int v : cp.codewords) os << ",code" << v;
    os << '\n';
    for (int label = 0; label < cp.p.rows; ++label) {
        os << label_names[static_cast<std::size_t>(label)];
        for (int col = 0; col < cp.p.cols; ++col) os << ',' << fmt(cp.p.at(label, col), 6);
        os << '\n';
    }
    return os.str();
}

std::string correspondence_csv(const std::vector<CorrespondenceRow>& rows) {
    std::ostringstream os;
    os << "# format: correspondence-v1\n";
    os << "rank,code,occurrence,label1,prc1,label2,prc2,token1,f1_1,token2,f1_2\n";
    int rank = 1;
    for (const auto& row : rows) {
        os << rank++ << ',' << row.code << ',' << row.occurrence;
        for (const auto& h : row.labels) os << ',' << h.name << ',' << fmt(h.score, 1);
        for (const auto& h : row.tokens) os << ',' << h.name << ',' << fmt(h.score, 1);
        os << '\n';
    }
    return os.str();
}

std::string codeword_stats_json(const CodewordStats& stats, const std::vector<std::string>& label_names) {
    nlohmann::json root;
    root["format"] = "codeword-stats-v1";
    root["codebook_size"] = stats.codebook_size;
    nlohmann::json codewords = nlohmann::json::array();
    for (int v = 0; v < stats.codebook_size; ++v) {
        const std::int64_t a = stats.occurrence_a[static_cast<std::size_t>(v)];
        const std::int64_t b = stats.occurrence_b[static_cast<std::size_t>(v)];
        if (a + b == 0) continue;
        nlohmann::json entry;
        entry["code"] = v;
        entry["occurrence_a"] = a;
        entry["occurrence_b"] = b;
        nlohmann::json labels_a = nlohmann::json::object();
        nlohmann::json labels_b = nlohmann::json::object();
        for (int label = 0; label < stats.label_count; ++label) {
            const auto ca = stats.label_cooc_a[static_cast<std::size_t>(v)][static_cast<std::size_t>(label)];
            const auto cb = stats.label_cooc_b[static_cast<std::size_t>(v)][static_cast<std::size_t>(label)];
            if (ca > 0) labels_a[label_names[static_cast<std::size_t>(label)]] = ca;
            if (cb > 0) labels_b[label_names[static_cast<std::size_t>(label)]] = cb;
        }
        entry["labels_a"] = std::move(labels_a);
        entry["labels_b"] = std::move(labels_b);
        nlohmann::json tokens = nlohmann::json::object();
        for (const auto& [token, c] : stats.token_cooc[static_cast<std::size_t>(v)]) tokens[token] = c;
        entry["tokens_b"] = std::move(tokens);
        codewords.push_back(std::move(entry));
    }
    root["codewords"] = std::move(codewords);
    return root.dump(2);
}

std::string localization_json(const std::vector<LocalizationMask>& masks, int codeword) {
    nlohmann::json root;
    root["format"] = "localization-v1";
    root["code"] = codeword;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& m : masks) {
        nlohmann::json entry;
        entry["instance"] = m.instance_id;
        entry["modality"] = std::string(1, m.modality);
        entry["grid"] = m.grid;
        nlohmann::json cells = nlohmann::json::array();
        for (bool b : m.mask) cells.push_back(b);
        entry["mask"] = std::move(cells);
        entries.push_back(std::move(entry));
    }
    root["masks"] = std::move(entries);
    return root.dump(2);
}

}  // namespace cmx
