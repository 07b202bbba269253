#pragma once

// Minimal CSV writer/reader for report files. Numbers are written with
// "%.17g" so files round-trip and are byte-stable across runs. Text cells
// containing separators are quoted; the reader does not unquote.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mvdfl {

std::string format_number(double value);

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path);

    CsvWriter& cell(std::string_view text);
    CsvWriter& cell(double value);
    CsvWriter& cell(long value);
    CsvWriter& cell(int value) { return cell(static_cast<long>(value)); }
    CsvWriter& cell(std::size_t value) { return cell(static_cast<long>(value)); }
    void end_row();
    void row(const std::vector<std::string>& cells);

private:
    std::ofstream out_;
    bool first_ = true;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name; throws Io if absent.
    std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

void write_matrix_csv(const Eigen::MatrixXd& m, const std::filesystem::path& path);

}  // namespace mvdfl
