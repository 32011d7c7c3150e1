#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace credmort {

/// Closed integer interval [first, last] of ages or calendar years.
struct IntRange {
    int first = 0;
    int last = -1;

    [[nodiscard]] std::size_t size() const noexcept {
        return last < first ? 0 : static_cast<std::size_t>(last - first + 1);
    }
    [[nodiscard]] bool contains(int v) const noexcept { return v >= first && v <= last; }
    [[nodiscard]] bool contains(const IntRange& other) const noexcept {
        return other.first >= first && other.last <= last;
    }
    [[nodiscard]] std::size_t index(int v) const noexcept { return static_cast<std::size_t>(v - first); }
    [[nodiscard]] int at(std::size_t i) const noexcept { return first + static_cast<int>(i); }

    friend bool operator==(const IntRange&, const IntRange&) = default;
};

/// Dense row-major matrix. Rows are ages, columns are years throughout the library.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T init = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, init) {}

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols_, cols_);
    }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Age x period table of central exposures and deaths for one population.
///
/// Deaths are real-valued: Lexis-averaged deaths are half-integers. A cell with
/// zero exposure is missing; its crude rate is undefined and it takes no part in
/// likelihoods or metrics.
class MortalityTable {
public:
    MortalityTable() = default;

    /// Throws std::invalid_argument if the matrices do not match the ranges or hold
    /// negative / non-finite values.
    MortalityTable(std::string population_id, IntRange ages, IntRange years,
                   Matrix<double> exposure, Matrix<double> deaths);

    [[nodiscard]] const std::string& population_id() const noexcept { return id_; }
    [[nodiscard]] IntRange ages() const noexcept { return ages_; }
    [[nodiscard]] IntRange years() const noexcept { return years_; }

    [[nodiscard]] const Matrix<double>& exposure() const noexcept { return exposure_; }
    [[nodiscard]] const Matrix<double>& deaths() const noexcept { return deaths_; }

    // Index-based accessors (ix into ages(), it into years()).
    [[nodiscard]] double exposure_at(std::size_t ix, std::size_t it) const { return exposure_(ix, it); }
    [[nodiscard]] double deaths_at(std::size_t ix, std::size_t it) const { return deaths_(ix, it); }
    [[nodiscard]] bool observed(std::size_t ix, std::size_t it) const { return exposure_(ix, it) > 0.0; }
    [[nodiscard]] std::optional<double> crude_rate(std::size_t ix, std::size_t it) const;

    /// Number of cells with positive exposure.
    [[nodiscard]] std::size_t observed_cells() const;

    /// Restrict to a sub-rectangle; throws if it is not contained in this table.
    [[nodiscard]] MortalityTable subset(IntRange ages, IntRange years) const;

    [[nodiscard]] MortalityTable with_id(std::string id) const;

    friend bool operator==(const MortalityTable&, const MortalityTable&) = default;

private:
    std::string id_;
    IntRange ages_;
    IntRange years_;
    Matrix<double> exposure_;
    Matrix<double> deaths_;
};

/// Counts of individuals alive at exact age x at the start of year t, plus the deaths
/// observed in the cohort parallelogram starting at (x, t).
struct RawLivesTable {
    std::string population_id;
    IntRange ages;
    IntRange years;
    Matrix<double> lives;
    Matrix<double> raw_deaths;
};

/// Central exposure and deaths from raw lives, assuming deaths are uniform on each
/// yearly parallelogram:
///   E[x,t] = N[x,t]/2 + N[x+1,t+1]/2,   D[x,t] = (N[x,t] - N[x+1,t+1])/2.
/// The last age and last year of the raw grid are dropped. Throws std::domain_error
/// if a cohort grows, which contradicts the closed-cohort assumption.
[[nodiscard]] MortalityTable lexis_convert(const RawLivesTable& raw);

/// Cell-wise sum of deaths and exposures. Throws std::invalid_argument on
/// mismatched grids, naming the offending dimension.
[[nodiscard]] MortalityTable aggregate(std::span<const MortalityTable> tables,
                                       std::string population_id = "0");

/// CSV with header `population,age,year,exposure,deaths`, one row per cell.
/// Rows may come in any order; every population must form a full rectangle.
[[nodiscard]] std::vector<MortalityTable> read_csv_all(std::istream& in);
[[nodiscard]] std::vector<MortalityTable> read_csv_all(const std::string& path);

/// Reads a file that must hold exactly one population.
[[nodiscard]] MortalityTable read_csv(const std::string& path);
/// Reads one named population out of a multi-population file.
[[nodiscard]] MortalityTable read_csv(const std::string& path, const std::string& population_id);

/// Writes rows sorted by (age, year) with shortest round-trip number formatting.
void write_csv(std::ostream& out, std::span<const MortalityTable> tables);
void write_csv(const MortalityTable& table, const std::string& path);
void write_csv(std::span<const MortalityTable> tables, const std::string& path);

/// Shortest decimal representation that parses back to the same double.
[[nodiscard]] std::string format_double(double v);

}  // namespace credmort
