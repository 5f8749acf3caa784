#pragma once

#include <cstdint>
#include <functional>
#include <future>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "pivotrank/chat_client.hpp"
#include "pivotrank/rerankers.hpp"
#include "pivotrank/types.hpp"

namespace pivotrank {

/// The generation prompt: a system message and a user message asking for a
/// document at relevance grade tau, with the four grade definitions.
struct PivotPrompt {
    std::string system;
    std::string user;
    RelevanceGrade tau;
};

PivotPrompt render_prompt(const Query& query, RelevanceGrade tau);

/// A generated reference document for one query.
struct PivotDocument {
    std::string query_id;
    std::string text;
    RelevanceGrade tau{2};
    std::optional<RelevanceGrade> verified_grade;
    std::string generator_id;
    int token_estimate = 0;
    int attempts = 1;

    /// The pivot as it enters reranker windows (id from pivot_doc_id).
    Document as_document() const { return {pivot_doc_id(query_id), text}; }
};

struct JudgeVerdict {
    RelevanceGrade grade;
    std::string raw;
};

class JudgeParseError : public std::runtime_error {
   public:
    explicit JudgeParseError(std::string raw);
    const std::string& raw() const noexcept { return raw_; }

   private:
    std::string raw_;
};

/// Bounds on pivot length in whitespace tokens.
struct LengthBounds {
    int min_tokens = 1;
    int max_tokens = 512;
};

/// clamp(2 * avgdl, 200, 512) tokens.
int default_max_tokens(double avgdl);

class PivotGenerator {
   public:
    virtual ~PivotGenerator() = default;
    virtual std::string id() const = 0;
    /// Raw completion text. `attempt` is 0 for the first try.
    virtual std::string generate(const Query& query, const PivotPrompt& prompt, int max_tokens,
                                 int attempt) const = 0;
};

class Judge {
   public:
    virtual ~Judge() = default;
    /// Raw judge output; the grade is recovered with parse_judge_grade.
    virtual std::string judge(const Query& query, const std::string& text) const = 0;
};

/// Last integer token in {0,1,2,3} in the output. Throws JudgeParseError.
RelevanceGrade parse_judge_grade(std::string_view raw);

/// One generation. Completions longer than bounds.max_tokens are cut to that
/// many words; empty or too-short completions throw.
PivotDocument generate_pivot(const PivotGenerator& generator, const Query& query,
                             RelevanceGrade tau, LengthBounds bounds, InferenceLedger& ledger,
                             int attempt = 0);

/// Judge the pivot and store the verdict on it.
JudgeVerdict verify_pivot(const Judge& judge, const Query& query, PivotDocument& pivot,
                          InferenceLedger& ledger);

/// Generate-and-verify until the judged grade equals tau. After max_attempts
/// misses, returns the attempt closest to tau (earliest on ties).
PivotDocument generate_verified_pivot(const PivotGenerator& generator, const Judge& judge,
                                      const Query& query, RelevanceGrade tau,
                                      LengthBounds bounds, int max_attempts,
                                      InferenceLedger& ledger);

/// Test double built from hidden judgments: for grade g it writes g on-topic
/// sentences (every query token plus words from the query's best-judged
/// docs) and 4 - g off-topic sentences (corpus words, no query token).
class OracleGenerator final : public PivotGenerator {
   public:
    OracleGenerator(std::span<const Document> corpus, const Qrels& qrels, std::uint64_t seed);

    std::string id() const override;
    std::string generate(const Query& query, const PivotPrompt& prompt, int max_tokens,
                         int attempt) const override;

   private:
    struct Topic {
        std::vector<std::string> filler;
        double mean_length = 0.0;
    };
    std::uint64_t seed_;
    std::vector<std::string> background_;
    std::map<std::string, Topic> topics_;
    double corpus_mean_length_ = 0.0;
};

/// Grade = number of sentences that contain every distinct query token, capped at 3.
class OracleJudge final : public Judge {
   public:
    std::string judge(const Query& query, const std::string& text) const override;
};

class HttpPivotGenerator final : public PivotGenerator {
   public:
    explicit HttpPivotGenerator(ChatConfig cfg);
    std::string id() const override;
    std::string generate(const Query& query, const PivotPrompt& prompt, int max_tokens,
                         int attempt) const override;

   private:
    ChatClient client_;
};

/// Relevance judge over chat completions using a 0-3 grading prompt.
class HttpJudge final : public Judge {
   public:
    explicit HttpJudge(ChatConfig cfg);
    std::string judge(const Query& query, const std::string& text) const override;
    static std::vector<ChatMessage> render(const Query& query, const std::string& text);

   private:
    ChatClient client_;
};

/// At most one generation per (query id, tau, generator id). Concurrent
/// callers for the same key wait for the first one; the first result wins.
class PivotCache {
   public:
    using Key = std::tuple<std::string, int, std::string>;

    std::optional<PivotDocument> find(const std::string& query_id, RelevanceGrade tau,
                                      const std::string& generator_id) const;

    /// Stores `doc` unless its key is present; returns the stored record.
    PivotDocument insert(PivotDocument doc);

    PivotDocument get_or_generate(const std::string& query_id, RelevanceGrade tau,
                                  const std::string& generator_id,
                                  const std::function<PivotDocument()>& make);

    std::size_t size() const;

    // JSONL, one PivotDocument per line, sorted by key on save.
    void load_jsonl(std::istream& in);
    void save_jsonl(std::ostream& out) const;
    /// Merge records from a JSONL file (first record per key wins).
    void load(const std::string& path);
    void save(const std::string& path) const;

    /// All records for a query id regardless of tau/generator.
    std::vector<PivotDocument> for_query(const std::string& query_id) const;

   private:
    mutable std::mutex mu_;
    std::map<Key, PivotDocument> docs_;
    std::map<Key, std::shared_future<PivotDocument>> pending_;
};

}  // namespace pivotrank
