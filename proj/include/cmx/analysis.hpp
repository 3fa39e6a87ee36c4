#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "cmx/codebook.hpp"
#include "cmx/dataset.hpp"
#include "cmx/matrix.hpp"

namespace cmx {

enum class Direction { kAToB, kBToA };

struct RetrievalReport {
    Direction direction = Direction::kAToB;
    double r1 = 0.0, r5 = 0.0, r10 = 0.0;  // fractions
    double median_rank = 0.0;
    double mean_rank = 0.0;
    int n = 0;
};

// Rank of every query's true match among all candidates by descending
// dot-product similarity, ties broken by candidate index.
std::vector<int> retrieval_ranks(const Matrix& queries, const Matrix& candidates);
RetrievalReport retrieval_metrics(const Matrix& z_a, const Matrix& z_b, Direction direction);

// Count accumulators behind the codeword analyses. Occurrences are position
// level; labels are the owning instance's label; tokens are the per-position
// concept tokens of modality B (the word-like side).
struct CodewordStats {
    int codebook_size = 0;
    int label_count = 0;
    std::vector<std::int64_t> occurrence_a;
    std::vector<std::int64_t> occurrence_b;
    std::vector<std::vector<std::int64_t>> label_cooc_a;  // [codeword][label]
    std::vector<std::vector<std::int64_t>> label_cooc_b;
    std::vector<std::map<std::string, std::int64_t>> token_cooc;  // [codeword][token]
    std::map<std::string, std::int64_t> token_occurrence;

    CodewordStats() = default;
    CodewordStats(int codewords, int labels);
};

// Folds one instance's assignments (both modalities) into the accumulators.
void accumulate(CodewordStats& stats, const CodeAssignment& assignment, const PairedInstance& instance,
                const std::vector<Concept>& concepts);

// Stats over a whole encoded dataset.
CodewordStats collect_stats(const PairedDataset& ds, const std::vector<CodeAssignment>& assign_a,
                            const std::vector<CodeAssignment>& assign_b, int codebook_size);

// P(label | codeword) per modality, over activated codewords only.
struct ConditionalProbability {
    std::vector<int> codewords;  // activated codeword ids, ascending
    Matrix p;                    // label_count x activated; columns sum to 1
};
ConditionalProbability conditional_probability(const CodewordStats& stats, char modality);

struct LabelHypothesis {
    std::string name;
    double score = 0.0;  // percentage
};

struct CorrespondenceRow {
    int code = 0;
    std::int64_t occurrence = 0;
    std::array<LabelHypothesis, 2> labels;  // by precision, descending
    std::array<LabelHypothesis, 2> tokens;  // by F1, descending
};

// Per-codeword label precision (modality A occurrences) and token F1
// (modality B occurrences), sorted by top-label precision descending.
// Codewords never activated on the A side are excluded.
std::vector<CorrespondenceRow> correspondence_table(const CodewordStats& stats,
                                                    const std::vector<std::string>& label_names);

struct LocalizationMask {
    std::int64_t instance_id = -1;
    char modality = '?';
    std::vector<int> grid;
    std::vector<bool> mask;  // true where the queried codeword fired
};

// Positions of one instance assigned to codeword v. Throws DimensionError
// when v is outside the codebook.
LocalizationMask localize(const CodeAssignment& assignment, int codeword, int codebook_size);

// Fraction of activated codewords whose usage is dominated (> threshold) by
// a single modality. Lower means the codebook is more jointly used.
double partition_statistic(const CodewordStats& stats, double threshold);

// Over codewords activated in both modalities: fraction whose most likely
// label agrees between the two modalities' conditional probabilities.
double label_agreement(const CodewordStats& stats);

// Report writers. CSV formats carry a version tag in the header row.
std::string retrieval_csv(const std::vector<RetrievalReport>& reports);
std::string conditional_probability_csv(const ConditionalProbability& cp, const std::vector<std::string>& label_names);
std::string correspondence_csv(const std::vector<CorrespondenceRow>& rows);
std::string codeword_stats_json(const CodewordStats& stats, const std::vector<std::string>& label_names);
std::string localization_json(const std::vector<LocalizationMask>& masks, int codeword);

}  // namespace cmx
