#include "credmort/mortality_table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <system_error>
#include <tuple>

namespace credmort {

namespace {

void check_matrix(const Matrix<double>& m, IntRange ages, IntRange years, const char* what) {
    if (m.rows() != ages.size() || m.cols() != years.size()) {
        std::ostringstream msg;
        msg << what << " matrix is " << m.rows() << "x" << m.cols() << ", expected "
            << ages.size() << "x" << years.size();
        throw std::invalid_argument(msg.str());
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            if (!std::isfinite(v) || v < 0.0) {
                std::ostringstream msg;
                msg << what << " at age " << ages.at(r) << ", year " << years.at(c)
                    << " is negative or not finite (" << v << ")";
                throw std::invalid_argument(msg.str());
            }
        }
    }
}

}  // namespace

MortalityTable::MortalityTable(std::string population_id, IntRange ages, IntRange years,
                               Matrix<double> exposure, Matrix<double> deaths)
    : id_(std::move(population_id)),
      ages_(ages),
      years_(years),
      exposure_(std::move(exposure)),
      deaths_(std::move(deaths)) {
    if (ages_.size() == 0 || years_.size() == 0) {
        throw std::invalid_argument("mortality table needs at least one age and one year");
    }
    check_matrix(exposure_, ages_, years_, "exposure");
    check_matrix(deaths_, ages_, years_, "deaths");
}

std::optional<double> MortalityTable::crude_rate(std::size_t ix, std::size_t it) const {
    const double e = exposure_(ix, it);
    if (e <= 0.0) return std::nullopt;
    return deaths_(ix, it) / e;
}

std::size_t MortalityTable::observed_cells() const {
    return static_cast<std::size_t>(
        std::count_if(exposure_.data().begin(), exposure_.data().end(), [](double e) { return e > 0.0; }));
}

MortalityTable MortalityTable::subset(IntRange ages, IntRange years) const {
    if (!ages_.contains(ages) || !years_.contains(years) || ages.size() == 0 || years.size() == 0) {
        std::ostringstream msg;
        msg << "subset ages " << ages.first << "-" << ages.last << ", years " << years.first << "-"
            << years.last << " not inside table " << id_ << " (ages " << ages_.first << "-"
            << ages_.last << ", years " << years_.first << "-" << years_.last << ")";
        throw std::out_of_range(msg.str());
    }
    Matrix<double> e(ages.size(), years.size());
    Matrix<double> d(ages.size(), years.size());
    for (std::size_t r = 0; r < ages.size(); ++r) {
        for (std::size_t c = 0; c < years.size(); ++c) {
            const auto sr = ages_.index(ages.at(r));
            const auto sc = years_.index(years.at(c));
            e(r, c) = exposure_(sr, sc);
            d(r, c) = deaths_(sr, sc);
        }
    }
    return MortalityTable(id_, ages, years, std::move(e), std::move(d));
}

MortalityTable MortalityTable::with_id(std::string id) const {
    MortalityTable copy = *this;
    copy.id_ = std::move(id);
    return copy;
}

MortalityTable lexis_convert(const RawLivesTable& raw) {
    if (raw.ages.size() < 2 || raw.years.size() < 2) {
        throw std::invalid_argument("lexis_convert needs at least two ages and two years of raw lives");
    }
    if (raw.lives.rows() != raw.ages.size() || raw.lives.cols() != raw.years.size()) {
        throw std::invalid_argument("raw lives matrix does not match its age/year ranges");
    }
    const IntRange ages{raw.ages.first, raw.ages.last - 1};
    const IntRange years{raw.years.first, raw.years.last - 1};
    Matrix<double> e(ages.size(), years.size());
    Matrix<double> d(ages.size(), years.size());
    for (std::size_t r = 0; r < ages.size(); ++r) {
        for (std::size_t c = 0; c < years.size(); ++c) {
            const double now = raw.lives(r, c);
            const double next = raw.lives(r + 1, c + 1);
            if (next > now) {
                std::ostringstream msg;
                msg << "population " << raw.population_id << ": cohort grows from " << now << " at age "
                    << ages.at(r) << ", year " << years.at(c) << " to " << next
                    << " one year later; closed cohorts (no migration) are required";
                throw std::domain_error(msg.str());
            }
            e(r, c) = 0.5 * now + 0.5 * next;
            d(r, c) = 0.5 * (now - next);
        }
    }
    return MortalityTable(raw.population_id, ages, years, std::move(e), std::move(d));
}

MortalityTable aggregate(std::span<const MortalityTable> tables, std::string population_id) {
    if (tables.empty()) throw std::invalid_argument("aggregate needs at least one table");
    const auto& first = tables.front();
    Matrix<double> e = first.exposure();
    Matrix<double> d = first.deaths();
    for (std::size_t k = 1; k < tables.size(); ++k) {
        const auto& t = tables[k];
        if (t.ages() != first.ages()) {
            std::ostringstream msg;
            msg << "aggregate: age range of population " << t.population_id() << " (" << t.ages().first
                << "-" << t.ages().last << ") differs from " << first.population_id() << " ("
                << first.ages().first << "-" << first.ages().last << ")";
            throw std::invalid_argument(msg.str());
        }
        if (t.years() != first.years()) {
            std::ostringstream msg;
            msg << "aggregate: year range of population " << t.population_id() << " (" << t.years().first
                << "-" << t.years().last << ") differs from " << first.population_id() << " ("
                << first.years().first << "-" << first.years().last << ")";
            throw std::invalid_argument(msg.str());
        }
        for (std::size_t r = 0; r < e.rows(); ++r) {
            for (std::size_t c = 0; c < e.cols(); ++c) {
                e(r, c) += t.exposure_at(r, c);
                d(r, c) += t.deaths_at(r, c);
            }
        }
    }
    return MortalityTable(std::move(population_id), first.ages(), first.years(), std::move(e), std::move(d));
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t row, const char* column) {
    field = trim(field);
    T value{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || field.empty()) {
        std::ostringstream msg;
        msg << "row " << row << ": column '" << column << "' is not numeric: '" << field << "'";
        throw std::runtime_error(msg.str());
    }
    return value;
}

struct CsvCell {
    double exposure;
    double deaths;
};

}  // namespace

std::vector<MortalityTable> read_csv_all(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV: missing header");
    if (trim(line) != "population,age,year,exposure,deaths") {
        throw std::runtime_error("unexpected CSV header '" + std::string(trim(line)) +
                                 "', expected 'population,age,year,exposure,deaths'");
    }

    std::vector<std::string> order;
    std::map<std::string, std::map<std::pair<int, int>, CsvCell>> cells;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 5) {
            std::ostringstream msg;
            msg << "row " << row << ": expected 5 fields, found " << fields.size();
            throw std::runtime_error(msg.str());
        }
        std::string id(trim(fields[0]));
        const int age = parse_number<int>(fields[1], row, "age");
        const int year = parse_number<int>(fields[2], row, "year");
        const double e = parse_number<double>(fields[3], row, "exposure");
        const double d = parse_number<double>(fields[4], row, "deaths");
        auto [it, fresh] = cells.try_emplace(id);
        if (fresh) order.push_back(id);
        if (!it->second.emplace(std::pair{age, year}, CsvCell{e, d}).second) {
            std::ostringstream msg;
            msg << "row " << row << ": duplicate cell population " << id << ", age " << age << ", year " << year;
            throw std::runtime_error(msg.str());
        }
    }

    std::vector<MortalityTable> tables;
    for (const auto& id : order) {
        const auto& pop = cells.at(id);
        IntRange ages{pop.begin()->first.first, pop.begin()->first.first};
        IntRange years{pop.begin()->first.second, pop.begin()->first.second};
        for (const auto& [key, cell] : pop) {
            ages.first = std::min(ages.first, key.first);
            ages.last = std::max(ages.last, key.first);
            years.first = std::min(years.first, key.second);
            years.last = std::max(years.last, key.second);
        }
        Matrix<double> e(ages.size(), years.size());
        Matrix<double> d(ages.size(), years.size());
        for (int a = ages.first; a <= ages.last; ++a) {
            for (int y = years.first; y <= years.last; ++y) {
                const auto found = pop.find({a, y});
                if (found == pop.end()) {
                    std::ostringstream msg;
                    msg << "population " << id << ": missing cell age " << a << ", year " << y
                        << " inside the rectangle ages " << ages.first << "-" << ages.last << ", years "
                        << years.first << "-" << years.last;
                    throw std::runtime_error(msg.str());
                }
                e(ages.index(a), years.index(y)) = found->second.exposure;
                d(ages.index(a), years.index(y)) = found->second.deaths;
            }
        }
        tables.emplace_back(id, ages, years, std::move(e), std::move(d));
    }
    return tables;
}

std::vector<MortalityTable> read_csv_all(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_csv_all(in);
}

MortalityTable read_csv(const std::string& path) {
    auto tables = read_csv_all(path);
    if (tables.size() != 1) {
        std::ostringstream msg;
        msg << path << " holds " << tables.size() << " populations, expected exactly one";
        throw std::runtime_error(msg.str());
    }
    return std::move(tables.front());
}

MortalityTable read_csv(const std::string& path, const std::string& population_id) {
    auto tables = read_csv_all(path);
    for (auto& t : tables) {
        if (t.population_id() == population_id) return std::move(t);
    }
    throw std::runtime_error("population '" + population_id + "' not found in " + path);
}

void write_csv(std::ostream& out, std::span<const MortalityTable> tables) {
    out << "population,age,year,exposure,deaths\n";
    for (const auto& t : tables) {
        for (std::size_t r = 0; r < t.ages().size(); ++r) {
            for (std::size_t c = 0; c < t.years().size(); ++c) {
                out << t.population_id() << ',' << t.ages().at(r) << ',' << t.years().at(c) << ','
                    << format_double(t.exposure_at(r, c)) << ',' << format_double(t.deaths_at(r, c)) << '\n';
            }
        }
    }
}

void write_csv(const MortalityTable& table, const std::string& path) {
    write_csv(std::span<const MortalityTable>(&table, 1), path);
}

void write_csv(std::span<const MortalityTable> tables, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_csv(out, tables);
}

}  // namespace credmort
