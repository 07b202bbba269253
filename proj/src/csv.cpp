#include "mvdfl/csv.hpp"

#include <cstdio>
#include <sstream>

#include "mvdfl/error.hpp"

namespace mvdfl {

std::string format_number(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

CsvWriter& CsvWriter::cell(std::string_view text) {
    if (!first_) out_ << ',';
    if (text.find_first_of(",\"\n\r") == std::string_view::npos) {
        out_ << text;
    } else {
        out_ << '"';
        for (char c : text) {
            if (c == '"') out_ << '"';
            out_ << c;
        }
        out_ << '"';
    }
    first_ = false;
    return *this;
}

CsvWriter& CsvWriter::cell(double value) { return cell(format_number(value)); }

CsvWriter& CsvWriter::cell(long value) { return cell(std::to_string(value)); }

void CsvWriter::end_row() {
    out_ << '\n';
    first_ = true;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    for (const auto& c : cells) cell(c);
    end_row();
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw Error(ErrorKind::Io, "missing CSV column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    CsvTable table;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (header) {
            table.header = std::move(cells);
            header = false;
        } else {
            table.rows.push_back(std::move(cells));
        }
    }
    return table;
}

void write_matrix_csv(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
    CsvWriter csv(path);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) csv.cell(m(r, c));
        csv.end_row();
    }
}

}  // namespace mvdfl
