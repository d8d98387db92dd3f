#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mhetd {

/// Flat `key = value` configuration. `#` starts a comment; lists are
/// comma separated. Every key must belong to the schema given at parse time.
class Config {
public:
    static Config parse(std::string_view text, const std::set<std::string, std::less<>>& schema);
    static Config load(const std::filesystem::path& path, const std::set<std::string, std::less<>>& schema);

    [[nodiscard]] bool has(std::string_view key) const;
    void set(const std::string& key, const std::string& value);

    /// Getters throw Config naming the key when it is missing or malformed.
    [[nodiscard]] const std::string& str(std::string_view key) const;
    [[nodiscard]] double number(std::string_view key) const;  ///< accepts "inf"
    [[nodiscard]] int integer(std::string_view key) const;
    [[nodiscard]] std::uint64_t u64(std::string_view key) const;
    [[nodiscard]] bool flag(std::string_view key) const;
    [[nodiscard]] std::vector<double> numbers(std::string_view key) const;
    [[nodiscard]] std::vector<int> integers(std::string_view key) const;
    [[nodiscard]] std::vector<std::string> strings(std::string_view key) const;

    [[nodiscard]] std::string str_or(std::string_view key, std::string fallback) const;
    [[nodiscard]] double number_or(std::string_view key, double fallback) const;
    [[nodiscard]] int integer_or(std::string_view key, int fallback) const;
    [[nodiscard]] bool flag_or(std::string_view key, bool fallback) const;

    [[nodiscard]] const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return values_; }

private:
    std::set<std::string, std::less<>> schema_;
    std::map<std::string, std::string, std::less<>> values_;
};

/// Shortest round-trip-safe decimal (at least 10 significant digits).
std::string format_number(double v);

/// Comma-separated output with a mandatory header row.
class CsvWriter {
public:
    CsvWriter(std::ostream& out, const std::vector<std::string>& header);

    CsvWriter& cell(double v);
    CsvWriter& cell(std::string_view v);
    CsvWriter& cell(std::int64_t v);
    CsvWriter& cell(int v) { return cell(static_cast<std::int64_t>(v)); }
    CsvWriter& blank();
    void end_row();

private:
    void separator();

    std::ostream& out_;
    std::size_t columns_;
    std::size_t filled_ = 0;
};

/// Parsed CSV with a header row; lines starting with '#' are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(std::string_view name) const;  ///< throws Io when absent
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mhetd
