#include "coxmiss/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace coxmiss {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == sep && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

bool parse_number(const std::string& s, double& v) {
    if (s.empty()) return false;
    try {
        size_t used = 0;
        v = std::stod(s, &used);
        return used == s.size() && std::isfinite(v);
    } catch (const std::exception&) {
        return false;
    }
}

std::string where(int line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

ParsedDataset parse_dataset_text(const std::string& text, const std::vector<std::string>& complete_columns) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw Error(ErrorCode::schema_error, "dataset is empty");
    const char sep = line.find('\t') != std::string::npos && line.find(',') == std::string::npos ? '\t' : ',';
    header = split_fields(line, sep);
    int time_col = -1, status_col = -1;
    std::vector<int> cov_cols;
    for (size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "time") time_col = static_cast<int>(c);
        else if (header[c] == "status") status_col = static_cast<int>(c);
        else cov_cols.push_back(static_cast<int>(c));
    }
    if (time_col < 0 || status_col < 0)
        throw Error(ErrorCode::schema_error, "header must contain 'time' and 'status' columns");
    if (cov_cols.empty()) throw Error(ErrorCode::schema_error, "dataset has no covariate columns");

    ParsedDataset out;
    Dataset& d = out.data;
    d.p = static_cast<int>(cov_cols.size());
    for (int c : cov_cols) d.names.push_back(header[static_cast<size_t>(c)]);
    for (const auto& name : complete_columns)
        if (std::find(d.names.begin(), d.names.end(), name) == d.names.end())
            throw Error(ErrorCode::schema_error, "unknown column '" + name + "'");
    std::vector<int> missing_count(static_cast<size_t>(d.p), 0);

    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto f = split_fields(line, sep);
        if (f.size() != header.size())
            throw Error(ErrorCode::schema_error, where(lineno) + "expected " + std::to_string(header.size()) +
                                                     " fields, found " + std::to_string(f.size()));
        ObservedSubject s;
        const std::string& ts = f[static_cast<size_t>(time_col)];
        const std::string& ss = f[static_cast<size_t>(status_col)];
        if (ts.empty() || ts == "NA" || ss.empty() || ss == "NA")
            throw Error(ErrorCode::validation_error, where(lineno) + "time and status may not be missing");
        if (!parse_number(ts, s.y) || !(s.y > 0.0))
            throw Error(ErrorCode::validation_error, where(lineno) + "time must be a positive number");
        double st = 0.0;
        if (!parse_number(ss, st) || (st != 0.0 && st != 1.0))
            throw Error(ErrorCode::validation_error, where(lineno) + "status must be 0 or 1");
        s.delta = static_cast<int>(st);
        std::vector<bool> flags(static_cast<size_t>(d.p), false);
        std::vector<double> vals;
        for (int k = 0; k < d.p; ++k) {
            const std::string& v = f[static_cast<size_t>(cov_cols[static_cast<size_t>(k)])];
            if (v.empty() || v == "NA") {
                flags[static_cast<size_t>(k)] = true;
                ++missing_count[static_cast<size_t>(k)];
                const auto& name = d.names[static_cast<size_t>(k)];
                if (std::find(complete_columns.begin(), complete_columns.end(), name) != complete_columns.end())
                    throw Error(ErrorCode::validation_error, where(lineno) + "column '" + name + "' must be complete");
                continue;
            }
            double x = 0.0;
            if (!parse_number(v, x)) throw Error(ErrorCode::schema_error, where(lineno) + "bad number '" + v + "'");
            vals.push_back(x);
        }
        s.mask = MissingMask(flags);
        s.x_obs = Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        d.subjects.push_back(std::move(s));
    }
    if (d.subjects.empty()) throw Error(ErrorCode::schema_error, "dataset has a header but no rows");
    for (int k = 0; k < d.p; ++k) {
        const double frac = static_cast<double>(missing_count[static_cast<size_t>(k)]) / d.n();
        out.missing_fraction.push_back(frac);
        if (frac == 1.0) out.warnings.push_back("column '" + d.names[static_cast<size_t>(k)] + "' is entirely missing");
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ParsedDataset parse_dataset(const std::string& path, const std::vector<std::string>& complete_columns) {
    return parse_dataset_text(read_file(path), complete_columns);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io_error, "cannot write '" + tmp.string() + "'");
        out << contents;
        out.flush();
        if (!out) throw Error(ErrorCode::io_error, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::io_error, "cannot rename onto '" + path + "'");
    }
}

std::string dataset_csv(const Dataset& data) {
    std::ostringstream out;
    out << "time,status";
    for (int k = 0; k < data.p; ++k)
        out << ',' << (k < static_cast<int>(data.names.size()) ? data.names[static_cast<size_t>(k)] : "x" + std::to_string(k + 1));
    out << '\n';
    char buf[64];
    for (const auto& s : data.subjects) {
        std::snprintf(buf, sizeof buf, "%.17g", s.y);
        out << buf << ',' << s.delta;
        const Vec x = s.x_full();
        for (int k = 0; k < data.p; ++k) {
            if (std::isnan(x(k))) {
                out << ",NA";
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", x(k));
                out << ',' << buf;
            }
        }
        out << '\n';
    }
    return out.str();
}

namespace {

using nlohmann::json;

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

Mat json_mat(const json& j) {
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = r > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(j[static_cast<size_t>(i)].size()) != c)
            throw Error(ErrorCode::schema_error, "ragged matrix in fit output");
        m.row(i) = json_vec(j[static_cast<size_t>(i)]).transpose();
    }
    return m;
}

constexpr const char* kSchema = "coxmiss.fit/1";

}  // namespace

std::string fit_output_json(const FitOutput& out) {
    json j;
    j["schema"] = kSchema;
    j["kind"] = out.kind;
    j["names"] = out.names;
    json beta = json::object();
    for (size_t k = 0; k < out.names.size(); ++k) beta[out.names[k]] = out.params.beta(static_cast<Eigen::Index>(k));
    j["beta_named"] = beta;
    j["beta"] = vec_json(out.params.beta);
    j["baseline"] = {{"time", out.params.baseline.times}, {"jump", out.params.baseline.jumps}};
    j["mu"] = vec_json(out.params.mu);
    j["sigma"] = mat_json(out.params.sigma);
    j["loglik"] = out.loglik;
    j["iterations"] = out.iterations;
    j["converged"] = out.converged;
    j["loglik_trace"] = out.loglik_trace;
    j["n"] = out.n;
    j["n_events"] = out.n_events;
    j["condition_on"] = out.condition_on;
    j["marginal_loglik"] = out.marginal_loglik;
    if (out.path) {
        const auto& p = *out.path;
        json pts = json::array();
        for (const auto& pt : p.points) {
            json e = {{"gamma", pt.gamma}, {"failed", pt.failed}};
            if (pt.failed) {
                e["error"] = pt.error;
            } else {
                e["beta"] = vec_json(pt.beta);
                e["active"] = pt.active;
                e["refit_index"] = pt.refit_index;
                e["loglik"] = pt.loglik;
                e["bic"] = pt.bic;
            }
            pts.push_back(std::move(e));
        }
        json refits = json::array();
        for (const auto& r : p.refits)
            refits.push_back({{"beta", vec_json(r.params.beta)},
                              {"loglik", r.loglik},
                              {"iterations", r.iterations},
                              {"converged", r.converged}});
        j["path"] = {{"points", pts}, {"refits", refits}, {"selected", p.selected}, {"gamma_max", p.gamma_max}, {"n", p.n}};
    }
    if (out.se) {
        j["bootstrap"] = {{"se", vec_json(*out.se)},
                          {"ci_lower", vec_json(*out.ci_lower)},
                          {"ci_upper", vec_json(*out.ci_upper)},
                          {"ci_level", out.ci_level}};
    }
    return j.dump(2) + "\n";
}

FitOutput parse_fit_output(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_error, std::string("fit output is not valid JSON: ") + e.what());
    }
    if (!j.contains("schema") || j["schema"] != kSchema)
        throw Error(ErrorCode::schema_error, std::string("fit output schema must be ") + kSchema);
    try {
        FitOutput out;
        out.kind = j.at("kind").get<std::string>();
        out.names = j.at("names").get<std::vector<std::string>>();
        out.params.beta = json_vec(j.at("beta"));
        out.params.baseline.times = j.at("baseline").at("time").get<std::vector<double>>();
        out.params.baseline.jumps = j.at("baseline").at("jump").get<std::vector<double>>();
        out.params.mu = json_vec(j.at("mu"));
        out.params.sigma = json_mat(j.at("sigma"));
        out.loglik = j.at("loglik").get<double>();
        out.iterations = j.at("iterations").get<int>();
        out.converged = j.at("converged").get<bool>();
        out.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
        out.n = j.at("n").get<int>();
        out.n_events = j.at("n_events").get<int>();
        out.condition_on = j.at("condition_on").get<std::vector<std::string>>();
        out.marginal_loglik = j.at("marginal_loglik").get<double>();
        if (j.contains("path")) {
            const auto& jp = j["path"];
            LassoPath p;
            p.selected = jp.at("selected").get<int>();
            p.gamma_max = jp.at("gamma_max").get<double>();
            p.n = jp.at("n").get<int>();
            for (const auto& e : jp.at("points")) {
                PathPoint pt;
                pt.gamma = e.at("gamma").get<double>();
                pt.failed = e.at("failed").get<bool>();
                if (pt.failed) {
                    pt.error = e.at("error").get<std::string>();
                } else {
                    pt.beta = json_vec(e.at("beta"));
                    pt.active = e.at("active").get<std::vector<int>>();
                    pt.refit_index = e.at("refit_index").get<int>();
                    pt.loglik = e.at("loglik").get<double>();
                    pt.bic = e.at("bic").get<double>();
                }
                p.points.push_back(std::move(pt));
            }
            for (const auto& e : jp.at("refits")) {
                FitResult r;
                r.params.beta = json_vec(e.at("beta"));
                r.loglik = e.at("loglik").get<double>();
                r.iterations = e.at("iterations").get<int>();
                r.converged = e.at("converged").get<bool>();
                p.refits.push_back(std::move(r));
            }
            out.path = std::move(p);
        }
        if (j.contains("bootstrap")) {
            const auto& b = j["bootstrap"];
            out.se = json_vec(b.at("se"));
            out.ci_lower = json_vec(b.at("ci_lower"));
            out.ci_upper = json_vec(b.at("ci_upper"));
            out.ci_level = b.at("ci_level").get<double>();
        }
        out.params.validate();
        if (static_cast<int>(out.names.size()) != out.params.p())
            throw Error(ErrorCode::schema_error, "fit output names do not match beta");
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_error, std::string("malformed fit output: ") + e.what());
    }
}

}  // namespace coxmiss
