#pragma once

// Diet-matrix ingestion and the reduction of a weighted food web to the
// modelled object: node/dyad partitions, transformed responses and
// centered covariates on the non-zero directed links.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "foodweb/csv.hpp"
#include "foodweb/errors.hpp"

namespace foodweb {

// ---------------------------------------------------------------------------
// Domain types

struct Taxonomy {
  // domain, kingdom, phylum, class, order, family, genus, species.
  // Empty string = missing rank.
  std::array<std::string, 8> ranks;
};

// Number of the 8 ranks at which the labels differ. A missing rank differs
// from everything, including another missing rank; two fully identical
// tuples give 0. This rank-count convention is a documented choice, not a
// published definition.
inline int taxonomic_distance(const Taxonomy& a, const Taxonomy& b) {
  if (a.ranks == b.ranks) return 0;
  int d = 0;
  for (int k = 0; k < 8; ++k) {
    const std::string& ra = a.ranks[k];
    const std::string& rb = b.ranks[k];
    if (ra.empty() || rb.empty() || ra != rb) ++d;
  }
  return d;
}

struct NodeMeta {
  double adult_biomass = 0.0;
  double population_biomass = 0.0;
  double annual_harvest = 0.0;
  double ingestion_factor = 0.0;
  std::optional<double> carrying_capacity;  // parsed, unused downstream
  Taxonomy taxonomy;
};

struct DietMatrix {
  int n = 0;
  std::vector<std::string> names;
  // pct(i,j) = percentage of j's diet due to i. Diagonal retained as
  // parsed; it is zeroed when consumption is derived.
  Eigen::MatrixXd pct;
  std::vector<NodeMeta> meta;

  int index_of(const std::string& name) const {
    for (int i = 0; i < n; ++i)
      if (names[i] == name) return i;
    return -1;
  }
};

enum class ResponseMode { population, per_adult };

inline std::string to_string(ResponseMode m) {
  return m == ResponseMode::population ? "population" : "per_adult";
}

inline ResponseMode response_mode_from_string(const std::string& s) {
  if (s == "population") return ResponseMode::population;
  if (s == "per_adult") return ResponseMode::per_adult;
  throw ValidationError("unknown response mode '" + s + "'");
}

struct NodePartition {
  std::vector<int> basal;   // prey only
  std::vector<int> middle;  // both roles
  std::vector<int> top;     // predator only

  // role lookups, sized n
  std::vector<char> sender;    // basal + middle
  std::vector<char> receiver;  // middle + top

  bool is_sender(int i) const { return sender[i] != 0; }
  bool is_receiver(int i) const { return receiver[i] != 0; }

  void rebuild_roles(int n) {
    sender.assign(n, 0);
    receiver.assign(n, 0);
    for (int i : basal) sender[i] = 1;
    for (int i : middle) sender[i] = receiver[i] = 1;
    for (int i : top) receiver[i] = 1;
  }
};

struct DyadPartition {
  // All pairs stored with i < j.
  std::vector<std::pair<int, int>> mutual;        // y_ij>0 and y_ji>0
  std::vector<std::pair<int, int>> send_only;     // y_ij>0, y_ji=0
  std::vector<std::pair<int, int>> receive_only;  // y_ij=0, y_ji>0

  int n_links() const {
    return 2 * static_cast<int>(mutual.size()) +
           static_cast<int>(send_only.size()) +
           static_cast<int>(receive_only.size());
  }
};

// One modelled directed link prey -> predator.
struct Link {
  int prey = -1;
  int pred = -1;
  double y = 0.0;
  Eigen::VectorXd x;  // [1, x1..xL]
  int pair = -1;      // index into ReducedWeb::pairs, -1 for singles
};

struct ReducedWeb {
  int n = 0;
  std::vector<std::string> names;
  NodePartition nodes;
  DyadPartition dyads;
  std::vector<Link> links;
  // For each mutual dyad (i<j): link indices (i->j, j->i).
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::string> covariate_names;  // length L
  ResponseMode mode = ResponseMode::population;
  std::vector<std::string> warnings;

  // link indices per node role, sized n
  std::vector<std::vector<int>> links_of_sender;
  std::vector<std::vector<int>> links_of_receiver;

  int L() const { return static_cast<int>(covariate_names.size()); }
  int n_links() const { return static_cast<int>(links.size()); }

  int covariate_index(const std::string& name) const {
    for (size_t i = 0; i < covariate_names.size(); ++i)
      if (covariate_names[i] == name) return static_cast<int>(i);
    return -1;
  }

  void rebuild_link_index() {
    links_of_sender.assign(n, {});
    links_of_receiver.assign(n, {});
    for (int l = 0; l < n_links(); ++l) {
      links_of_sender[links[l].prey].push_back(l);
      links_of_receiver[links[l].pred].push_back(l);
    }
  }
};

// Canonical covariate order; CLI names.
inline const std::vector<std::string>& all_covariate_names() {
  static const std::vector<std::string> names = {
      "taxdist", "prey_biomass", "prey_harvest", "pred_biomass",
      "pred_harvest"};
  return names;
}

// ---------------------------------------------------------------------------
// Ingestion

// Diet CSV: first row = node names (an optional leading label cell is
// allowed); each following row = one prey row of percentages, optionally
// prefixed with the row's node name.
inline DietMatrix load_diet_percentages(const std::string& diet_path) {
  csv::Table t = csv::read_file(diet_path);
  DietMatrix m;
  bool row_labels = false;
  std::vector<std::string> header = t.header;
  if (!header.empty() && header.front().empty()) {
    header.erase(header.begin());
    row_labels = true;
  }
  m.n = static_cast<int>(header.size());
  m.names = header;
  if (m.n == 0) throw ParseError(diet_path + ": no node names in header");
  {
    std::set<std::string> uniq(m.names.begin(), m.names.end());
    if (static_cast<int>(uniq.size()) != m.n)
      throw ParseError(diet_path + ": duplicate node name");
  }
  if (static_cast<int>(t.rows.size()) != m.n)
    throw ParseError(diet_path + ": matrix not square: " +
                     std::to_string(t.rows.size()) + " rows for " +
                     std::to_string(m.n) + " columns");
  m.pct.resize(m.n, m.n);
  for (int i = 0; i < m.n; ++i) {
    auto row = t.rows[i];
    if (static_cast<int>(row.size()) == m.n + 1) {
      if (row.front() != m.names[i])
        throw ParseError(diet_path + ": row label '" + row.front() +
                         "' does not match header name '" + m.names[i] + "'");
      row.erase(row.begin());
    } else if (!row_labels && static_cast<int>(row.size()) != m.n) {
      throw ParseError(diet_path + ": row " + std::to_string(i + 1) + " has " +
                       std::to_string(row.size()) + " cells, expected " +
                       std::to_string(m.n));
    } else if (row_labels && static_cast<int>(row.size()) != m.n) {
      throw ParseError(diet_path + ": row " + std::to_string(i + 1) +
                       " missing its label cell");
    }
    for (int j = 0; j < m.n; ++j) {
      double v = csv::to_double(
          row[j], diet_path + " row " + std::to_string(i + 1) + " col " +
                      std::to_string(j + 1));
      if (v < 0.0)
        throw ParseError("negative percentage at (" + std::to_string(i + 1) +
                         "," + std::to_string(j + 1) + ") in " + diet_path);
      m.pct(i, j) = v;
    }
  }
  return m;
}

// Metadata CSV columns: name, adult_biomass, population_biomass,
// annual_harvest, ingestion_factor, carrying_capacity (optional, may be
// empty), tax_domain..tax_species.
inline void load_node_metadata(const std::string& meta_path, DietMatrix& m) {
  csv::Table t = csv::read_file(meta_path);
  static const std::array<std::string, 8> tax_cols = {
      "tax_domain", "tax_kingdom", "tax_phylum", "tax_class",
      "tax_order",  "tax_family",  "tax_genus",  "tax_species"};
  const std::vector<std::string> required = {
      "name", "adult_biomass", "population_biomass", "annual_harvest",
      "ingestion_factor"};
  for (const auto& col : required)
    if (t.column(col) < 0)
      throw ParseError(meta_path + ": missing required column '" + col + "'");
  int c_cc = t.column("carrying_capacity");
  std::array<int, 8> c_tax;
  for (int k = 0; k < 8; ++k) {
    c_tax[k] = t.column(tax_cols[k]);
    if (c_tax[k] < 0)
      throw ParseError(meta_path + ": missing column '" + tax_cols[k] + "'");
  }
  m.meta.assign(m.n, NodeMeta{});
  std::vector<char> seen(m.n, 0);
  for (size_t rix = 0; rix < t.rows.size(); ++rix) {
    const auto& row = t.rows[rix];
    auto cell = [&](int c) -> std::string {
      return c >= 0 && c < static_cast<int>(row.size()) ? row[c] : "";
    };
    std::string name = cell(t.column("name"));
    int i = m.index_of(name);
    if (i < 0)
      throw ParseError(meta_path + ": row " + std::to_string(rix + 2) +
                       ": unknown node '" + name + "'");
    if (seen[i])
      throw ParseError(meta_path + ": duplicate metadata for node '" + name +
                       "'");
    seen[i] = 1;
    NodeMeta& nm = m.meta[i];
    auto num = [&](const std::string& col) {
      return csv::to_double(cell(t.column(col)),
                            meta_path + " row " + std::to_string(rix + 2) +
                                " column " + col);
    };
    nm.adult_biomass = num("adult_biomass");
    nm.population_biomass = num("population_biomass");
    nm.annual_harvest = num("annual_harvest");
    nm.ingestion_factor = num("ingestion_factor");
    if (c_cc >= 0 && !cell(c_cc).empty())
      nm.carrying_capacity = csv::to_double(cell(c_cc), meta_path);
    for (int k = 0; k < 8; ++k) nm.taxonomy.ranks[k] = cell(c_tax[k]);
  }
  for (int i = 0; i < m.n; ++i)
    if (!seen[i])
      throw ParseError(meta_path + ": no metadata row for node '" +
                       m.names[i] + "'");
}

inline DietMatrix load_diet_matrix(const std::string& diet_path,
                                   const std::string& meta_path) {
  DietMatrix m = load_diet_percentages(diet_path);
  load_node_metadata(meta_path, m);
  return m;
}

// ---------------------------------------------------------------------------
// Derivation

// Rescale each column with positive off-diagonal sum to sum exactly 100.
// The diagonal is excluded from the sum and zeroed in rescaled columns;
// all-zero columns (basal nodes) pass through unchanged.
inline DietMatrix rescale_columns(const DietMatrix& m) {
  DietMatrix out = m;
  for (int j = 0; j < m.n; ++j) {
    double colsum = 0.0;
    for (int i = 0; i < m.n; ++i)
      if (i != j) colsum += m.pct(i, j);
    if (colsum <= 0.0) continue;
    for (int i = 0; i < m.n; ++i)
      out.pct(i, j) = i == j ? 0.0 : m.pct(i, j) * (100.0 / colsum);
  }
  return out;
}

// cell(i,j) = B_j * ingestion_factor_j * diet proportion of j due to i,
// with B_j the population or adult individual biomass. Diagonal forced 0.
inline Eigen::MatrixXd derive_consumption(const DietMatrix& m,
                                          ResponseMode mode) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m.n, m.n);
  for (int j = 0; j < m.n; ++j) {
    bool has_diet = false;
    for (int i = 0; i < m.n; ++i)
      if (i != j && m.pct(i, j) > 0.0) has_diet = true;
    if (!has_diet) continue;
    double biomass = mode == ResponseMode::population
                         ? m.meta[j].population_biomass
                         : m.meta[j].adult_biomass;
    if (biomass <= 0.0 || m.meta[j].ingestion_factor <= 0.0)
      throw ValidationError("node '" + m.names[j] +
                            "' consumes but has missing biomass or "
                            "ingestion factor");
    for (int i = 0; i < m.n; ++i) {
      if (i == j) continue;
      c(i, j) = biomass * m.meta[j].ingestion_factor * (m.pct(i, j) / 100.0);
    }
  }
  return c;
}

// 20th root for population consumption, 10th for per-adult; 0 maps to 0.
inline Eigen::MatrixXd transform_response(const Eigen::MatrixXd& c,
                                          ResponseMode mode) {
  double p = mode == ResponseMode::population ? 1.0 / 20.0 : 1.0 / 10.0;
  return c.unaryExpr([p](double v) { return v > 0.0 ? std::pow(v, p) : 0.0; });
}

inline NodePartition classify_nodes(const Eigen::MatrixXd& y) {
  int n = static_cast<int>(y.rows());
  NodePartition p;
  for (int i = 0; i < n; ++i) {
    double out_sum = 0.0, in_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      out_sum += y(i, j);
      in_sum += y(j, i);
    }
    if (out_sum > 0.0 && in_sum > 0.0)
      p.middle.push_back(i);
    else if (out_sum > 0.0)
      p.basal.push_back(i);
    else if (in_sum > 0.0)
      p.top.push_back(i);
    else
      throw ValidationError("node " + std::to_string(i + 1) + " has no links");
  }
  p.rebuild_roles(n);
  return p;
}

inline DyadPartition classify_dyads(const Eigen::MatrixXd& y) {
  int n = static_cast<int>(y.rows());
  DyadPartition d;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      bool fwd = y(i, j) > 0.0, bwd = y(j, i) > 0.0;
      if (fwd && bwd)
        d.mutual.emplace_back(i, j);
      else if (fwd)
        d.send_only.emplace_back(i, j);
      else if (bwd)
        d.receive_only.emplace_back(i, j);
    }
  }
  return d;
}

namespace detail {

// Raw (pre-log) covariate value of `name` for directed link prey->pred.
inline double raw_covariate(const DietMatrix& m, const std::string& name,
                            int prey, int pred) {
  if (name == "taxdist")
    return static_cast<double>(
        taxonomic_distance(m.meta[prey].taxonomy, m.meta[pred].taxonomy));
  if (name == "prey_biomass") return m.meta[prey].adult_biomass;
  if (name == "prey_harvest") return m.meta[prey].annual_harvest;
  if (name == "pred_biomass") return m.meta[pred].adult_biomass;
  if (name == "pred_harvest") return m.meta[pred].annual_harvest;
  throw ValidationError("unknown covariate '" + name + "'");
}

}  // namespace detail

// For every modelled directed link, build [1, x1..xL]: raw value, then
// log(v + delta) with delta = 1 iff the column contains a zero, then
// center each column to mean 0 over the modelled links.
inline void build_covariates(const DietMatrix& m,
                             const std::vector<std::string>& subset,
                             ReducedWeb& web) {
  int L = static_cast<int>(subset.size());
  int nl = web.n_links();
  Eigen::MatrixXd cols(nl, L);
  for (int c = 0; c < L; ++c) {
    bool any_zero = false;
    for (int l = 0; l < nl; ++l) {
      double v =
          detail::raw_covariate(m, subset[c], web.links[l].prey,
                                web.links[l].pred);
      if (v < 0.0)
        throw ValidationError("negative covariate " + subset[c] +
                              " for link " + m.names[web.links[l].prey] +
                              " -> " + m.names[web.links[l].pred]);
      if (v == 0.0) any_zero = true;
      cols(l, c) = v;
    }
    double delta = any_zero ? 1.0 : 0.0;
    for (int l = 0; l < nl; ++l) cols(l, c) = std::log(cols(l, c) + delta);
    double mean = cols.col(c).mean();
    cols.col(c).array() -= mean;
    if (nl > 0 && cols.col(c).cwiseAbs().maxCoeff() < 1e-12)
      web.warnings.push_back("covariate '" + subset[c] +
                             "' is constant over modelled links: "
                             "no information");
  }
  for (int l = 0; l < nl; ++l) {
    web.links[l].x.resize(L + 1);
    web.links[l].x(0) = 1.0;
    for (int c = 0; c < L; ++c) web.links[l].x(c + 1) = cols(l, c);
  }
  web.covariate_names = subset;
}

// Full pipeline: rescale -> consumption -> transform -> classify -> covariates.
inline ReducedWeb assemble_reduced_web(const DietMatrix& m, ResponseMode mode,
                                       const std::vector<std::string>& subset) {
  for (const auto& name : subset)
    if (std::find(all_covariate_names().begin(), all_covariate_names().end(),
                  name) == all_covariate_names().end())
      throw ValidationError("unknown covariate '" + name + "'");
  DietMatrix scaled = rescale_columns(m);
  Eigen::MatrixXd cons = derive_consumption(scaled, mode);
  Eigen::MatrixXd y = transform_response(cons, mode);

  ReducedWeb web;
  web.n = m.n;
  web.names = m.names;
  web.mode = mode;
  web.nodes = classify_nodes(y);
  web.dyads = classify_dyads(y);

  auto add_link = [&](int prey, int pred, int pair) {
    Link lk;
    lk.prey = prey;
    lk.pred = pred;
    lk.y = y(prey, pred);
    lk.pair = pair;
    web.links.push_back(lk);
  };
  for (auto [i, j] : web.dyads.mutual) {
    int p = static_cast<int>(web.pairs.size());
    int a = web.n_links();
    add_link(i, j, p);
    add_link(j, i, p);
    web.pairs.emplace_back(a, a + 1);
  }
  for (auto [i, j] : web.dyads.send_only) add_link(i, j, -1);
  for (auto [i, j] : web.dyads.receive_only) add_link(j, i, -1);

  build_covariates(m, subset, web);
  web.rebuild_link_index();
  return web;
}

// ---------------------------------------------------------------------------
// ReducedWeb file I/O

inline void write_reduced_web(const ReducedWeb& web, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "prey,predator,y";
  for (const auto& c : web.covariate_names) out << "," << c;
  out << "\n";
  for (const auto& lk : web.links) {
    out << web.names[lk.prey] << "," << web.names[lk.pred] << ","
        << csv::format_double(lk.y);
    for (int c = 1; c < lk.x.size(); ++c)
      out << "," << csv::format_double(lk.x(c));
    out << "\n";
  }
}

inline void write_cardinality_report(const ReducedWeb& web,
                                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "n_nodes = " << web.n << "\n"
      << "n_links = " << web.n_links() << "\n"
      << "I1_basal = " << web.nodes.basal.size() << "\n"
      << "I2_middle = " << web.nodes.middle.size() << "\n"
      << "I3_top = " << web.nodes.top.size() << "\n"
      << "S1_mutual = " << web.dyads.mutual.size() << "\n"
      << "S2_send_only = " << web.dyads.send_only.size() << "\n"
      << "S3_receive_only = " << web.dyads.receive_only.size() << "\n"
      << "response_mode = " << to_string(web.mode) << "\n";
}

// Rebuild a ReducedWeb from the link CSV written above. Node indices
// follow first appearance in the file; partitions are re-derived from
// the link structure.
inline ReducedWeb read_reduced_web(const std::string& path,
                                   ResponseMode mode) {
  csv::Table t = csv::read_file(path);
  if (t.header.size() < 3 || t.header[0] != "prey" ||
      t.header[1] != "predator" || t.header[2] != "y")
    throw ParseError(path + ": expected header prey,predator,y,...");
  ReducedWeb web;
  web.mode = mode;
  for (size_t c = 3; c < t.header.size(); ++c)
    web.covariate_names.push_back(t.header[c]);
  int L = web.L();

  std::map<std::string, int> index;
  auto node_id = [&](const std::string& name) {
    auto it = index.find(name);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(web.names.size());
    index.emplace(name, id);
    web.names.push_back(name);
    return id;
  };
  std::map<std::pair<int, int>, int> link_at;  // (prey,pred) -> link idx
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (static_cast<int>(row.size()) != 3 + L)
      throw ParseError(path + ": row " + std::to_string(r + 2) +
                       " has wrong cell count");
    Link lk;
    lk.prey = node_id(row[0]);
    lk.pred = node_id(row[1]);
    lk.y = csv::to_double(row[2], path + " row " + std::to_string(r + 2));
    // ingested responses are positive by construction, but webs written
    // from synthetic Gaussian-scale responses may carry any finite value
    if (!std::isfinite(lk.y))
      throw ParseError(path + ": row " + std::to_string(r + 2) +
                       ": response must be finite");
    lk.x.resize(L + 1);
    lk.x(0) = 1.0;
    for (int c = 0; c < L; ++c)
      lk.x(c + 1) =
          csv::to_double(row[3 + c], path + " row " + std::to_string(r + 2));
    if (link_at.count({lk.prey, lk.pred}))
      throw ParseError(path + ": duplicate link " + row[0] + " -> " + row[1]);
    link_at[{lk.prey, lk.pred}] = web.n_links();
    web.links.push_back(lk);
  }
  web.n = static_cast<int>(web.names.size());
  if (web.n == 0) throw ParseError(path + ": no links");

  // Partitions from link structure (presence, not response magnitude).
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(web.n, web.n);
  for (const auto& lk : web.links) y(lk.prey, lk.pred) = 1.0;
  web.nodes = classify_nodes(y);
  web.dyads = classify_dyads(y);
  for (auto [i, j] : web.dyads.mutual) {
    int a = link_at.at({i, j});
    int b = link_at.at({j, i});
    int p = static_cast<int>(web.pairs.size());
    web.links[a].pair = web.links[b].pair = p;
    web.pairs.emplace_back(a, b);
  }
  web.rebuild_link_index();
  return web;
}

}  // namespace foodweb
