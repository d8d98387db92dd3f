#include "mhetd/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "mhetd/errors.hpp"

namespace mhetd {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) {
            return parts;
        }
        start = pos + 1;
    }
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view what) {
    throw Error(ErrorCode::Config, "key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                                       std::string(what));
}

double parse_double(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    if (t == "inf" || t == "+inf" || t == "infinity") {
        return std::numeric_limits<double>::infinity();
    }
    double v = 0.0;
    const auto* end = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(t.data(), end, v);
    if (ec != std::errc() || ptr != end || t.empty()) {
        bad_value(key, text, "a number");
    }
    return v;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
    const auto t = trim(text);
    Int v{};
    const auto* end = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(t.data(), end, v);
    if (ec != std::errc() || ptr != end || t.empty()) {
        bad_value(key, text, "an integer");
    }
    return v;
}

}  // namespace

Config Config::parse(std::string_view text, const std::set<std::string, std::less<>>& schema) {
    Config cfg;
    cfg.schema_ = schema;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (cfg.values_.contains(key)) {
            throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        cfg.set(key, std::string(trim(line.substr(eq + 1))));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path, const std::set<std::string, std::less<>>& schema) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Config, "cannot open config '" + path.string() + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), schema);
}

bool Config::has(std::string_view key) const { return values_.find(key) != values_.end(); }

void Config::set(const std::string& key, const std::string& value) {
    if (!schema_.contains(key)) {
        throw Error(ErrorCode::Config, "unknown key '" + key + "'");
    }
    values_[key] = value;
}

const std::string& Config::str(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw Error(ErrorCode::Config, "missing key '" + std::string(key) + "'");
    }
    return it->second;
}

double Config::number(std::string_view key) const { return parse_double(key, str(key)); }

int Config::integer(std::string_view key) const { return parse_int<int>(key, str(key)); }

std::uint64_t Config::u64(std::string_view key) const { return parse_int<std::uint64_t>(key, str(key)); }

bool Config::flag(std::string_view key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    bad_value(key, v, "a boolean");
}

std::vector<double> Config::numbers(std::string_view key) const {
    std::vector<double> out;
    for (const auto& part : split(str(key), ',')) {
        out.push_back(parse_double(key, part));
    }
    return out;
}

std::vector<int> Config::integers(std::string_view key) const {
    std::vector<int> out;
    for (const auto& part : split(str(key), ',')) {
        out.push_back(parse_int<int>(key, part));
    }
    return out;
}

std::vector<std::string> Config::strings(std::string_view key) const {
    auto parts = split(str(key), ',');
    for (const auto& p : parts) {
        if (p.empty()) {
            bad_value(key, str(key), "a list of names");
        }
    }
    return parts;
}

std::string Config::str_or(std::string_view key, std::string fallback) const {
    return has(key) ? str(key) : std::move(fallback);
}

double Config::number_or(std::string_view key, double fallback) const { return has(key) ? number(key) : fallback; }

int Config::integer_or(std::string_view key, int fallback) const { return has(key) ? integer(key) : fallback; }

bool Config::flag_or(std::string_view key, bool fallback) const { return has(key) ? flag(key) : fallback; }

std::string format_number(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    for (int digits = 10; digits <= 17; ++digits) {
        std::snprintf(buf, sizeof buf, "%.*g", digits, v);
        if (std::strtod(buf, nullptr) == v) {
            break;
        }
    }
    return buf;
}

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header)
    : out_(out), columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        out_ << (i ? "," : "") << header[i];
    }
    out_ << '\n';
}

void CsvWriter::separator() {
    if (filled_ == columns_) {
        throw Error(ErrorCode::Io, "CSV row has more cells than the header");
    }
    if (filled_++ > 0) {
        out_ << ',';
    }
}

CsvWriter& CsvWriter::cell(double v) {
    separator();
    out_ << format_number(v);
    return *this;
}

CsvWriter& CsvWriter::cell(std::string_view v) {
    separator();
    out_ << v;
    return *this;
}

CsvWriter& CsvWriter::cell(std::int64_t v) {
    separator();
    out_ << v;
    return *this;
}

CsvWriter& CsvWriter::blank() {
    separator();
    return *this;
}

void CsvWriter::end_row() {
    if (filled_ != columns_) {
        throw Error(ErrorCode::Io, "CSV row has fewer cells than the header");
    }
    out_ << '\n';
    filled_ = 0;
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw Error(ErrorCode::Io, "CSV has no column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    }
    CsvTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line.front() == '#') {
            continue;
        }
        auto cells = split(line, ',');
        if (table.header.empty()) {
            table.header = std::move(cells);
        } else {
            if (cells.size() != table.header.size()) {
                throw Error(ErrorCode::Io, "'" + path.string() + "': row width differs from header");
            }
            table.rows.push_back(std::move(cells));
        }
    }
    if (table.header.empty()) {
        throw Error(ErrorCode::Io, "'" + path.string() + "' is empty");
    }
    return table;
}

}  // namespace mhetd
