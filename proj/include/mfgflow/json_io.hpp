#pragma once

#include "mfgflow/common.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mfgflow {

using Json = nlohmann::json;

/// Write text to path atomically: write to a sibling temp file, fsync, rename.
/// No partial output is ever visible under the final name.
void atomic_write_text(const std::string& path, const std::string& text);

std::string read_text(const std::string& path);
Json load_json_file(const std::string& path);

/// Reject keys outside the allowed set; errors name both the offending key
/// and the context so schema violations are self-explanatory.
void reject_unknown_keys(const Json& obj, const std::vector<std::string>& allowed,
                         const std::string& context);

double json_number(const Json& obj, const std::string& key, const std::string& context);
int json_int(const Json& obj, const std::string& key, const std::string& context);
Vec json_vec(const Json& obj, const std::string& key, int expected_len, const std::string& context);

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j);

/// Minimal CSV emitter; numbers rendered with round-trip precision (%.17g)
/// so identical runs produce byte-identical files.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(const std::vector<std::string>& cells);
    static std::string format(double x);
    std::string str() const;
    void write_atomic(const std::string& path) const { atomic_write_text(path, str()); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

}  // namespace mfgflow
