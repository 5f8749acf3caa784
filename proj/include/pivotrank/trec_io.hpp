#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pivotrank/types.hpp"

namespace pivotrank {

/// Parse `qid Q0 docid rank score tag` lines. Lists come back sorted by score
/// desc (ties by doc id); the rank column is kept in ScoredDoc::source_rank.
Run parse_trec_run(std::istream& in);
Run parse_trec_run(const std::string& text);

/// One line per entry, ranks 1-based, scores at 6 decimal places.
std::string emit_trec_run(const Run& run, const std::string& tag);
void write_trec_run(std::ostream& out, const Run& run, const std::string& tag);

/// Parse `qid 0 docid grade` lines; grades outside [0,3] are rejected.
Qrels parse_qrels(std::istream& in);
Qrels parse_qrels(const std::string& text);
std::string emit_qrels(const Qrels& qrels);

// JSONL with one {"id": ..., "text": ...} object per line.
std::vector<Document> read_documents_jsonl(std::istream& in);
std::vector<Query> read_queries_jsonl(std::istream& in);
void write_documents_jsonl(std::ostream& out, const std::vector<Document>& docs);
void write_queries_jsonl(std::ostream& out, const std::vector<Query>& queries);

// File helpers; throw std::runtime_error when the file cannot be opened.
Run load_trec_run(const std::string& path);
Qrels load_qrels(const std::string& path);
std::vector<Document> load_documents(const std::string& path);
std::vector<Query> load_queries(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace pivotrank
