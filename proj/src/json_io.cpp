#include "mfgflow/json_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mfgflow {

void atomic_write_text(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot open for writing: " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw RuntimeFailure("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw RuntimeFailure("rename failed for " + target.string() + ": " + ec.message());
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json load_json_file(const std::string& path) {
    const std::string text = read_text(path);
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("malformed JSON in " + path);
    return j;
}

void reject_unknown_keys(const Json& obj, const std::vector<std::string>& allowed,
                         const std::string& context) {
    if (!obj.is_object()) throw InvalidInput(context + ": expected a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw InvalidInput(context + ": unknown key \"" + it.key() + "\"");
    }
}

double json_number(const Json& obj, const std::string& key, const std::string& context) {
    if (!obj.contains(key)) throw InvalidInput(context + ": missing key \"" + key + "\"");
    if (!obj[key].is_number()) throw InvalidInput(context + ": key \"" + key + "\" must be a number");
    return obj[key].get<double>();
}

int json_int(const Json& obj, const std::string& key, const std::string& context) {
    if (!obj.contains(key)) throw InvalidInput(context + ": missing key \"" + key + "\"");
    if (!obj[key].is_number_integer()) throw InvalidInput(context + ": key \"" + key + "\" must be an integer");
    return obj[key].get<int>();
}

Vec json_vec(const Json& obj, const std::string& key, int expected_len, const std::string& context) {
    if (!obj.contains(key)) throw InvalidInput(context + ": missing key \"" + key + "\"");
    const Json& arr = obj[key];
    if (!arr.is_array()) throw InvalidInput(context + ": key \"" + key + "\" must be an array");
    if (expected_len >= 0 && static_cast<int>(arr.size()) != expected_len)
        throw InvalidInput(context + ": key \"" + key + "\" must have length " + std::to_string(expected_len));
    Vec v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw InvalidInput(context + ": key \"" + key + "\" must hold numbers");
        v[static_cast<int>(i)] = arr[i].get<double>();
    }
    return v;
}

Json vec_to_json(const Vec& v) {
    Json arr = Json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Vec vec_from_json(const Json& j) {
    if (!j.is_array()) throw InvalidInput("expected JSON array of numbers");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
}

void CsvWriter::add_row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size())
        throw InvalidInput("CSV row width mismatch");
    rows_.push_back(cells);
}

std::string CsvWriter::format(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string CsvWriter::str() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < header_.size(); ++i)
        out << header_[i] << (i + 1 < header_.size() ? "," : "\n");
    for (const auto& row : rows_)
        for (std::size_t i = 0; i < row.size(); ++i)
            out << row[i] << (i + 1 < row.size() ? "," : "\n");
    return out.str();
}

}  // namespace mfgflow
