#include "arcslot/metrics.hpp"

#include <cctype>
#include <map>
#include <sstream>

#include "arcslot/error.hpp"

namespace arcslot {

std::vector<std::string> normalize_answer(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u))
      cleaned.push_back(static_cast<char>(std::tolower(u)));
    else
      cleaned.push_back(' ');
  }
  std::vector<std::string> tokens;
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

int non_strict_em(const std::string& prediction, const std::string& gold) {
  const auto pred = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (g.empty()) return 1;
  if (pred.size() < g.size()) return 0;
  for (std::size_t start = 0; start + g.size() <= pred.size(); ++start) {
    bool match = true;
    for (std::size_t i = 0; i < g.size() && match; ++i) match = pred[start + i] == g[i];
    if (match) return 1;
  }
  return 0;
}

double token_f1(const std::string& prediction, const std::string& gold) {
  const auto pred = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (pred.empty() && g.empty()) return 1.0;
  if (pred.empty() || g.empty()) return 0.0;
  std::map<std::string, int> pc, gc;
  for (const auto& t : pred) pc[t] += 1;
  for (const auto& t : g) gc[t] += 1;
  int overlap = 0;
  for (const auto& [tok, c] : pc) {
    const auto it = gc.find(tok);
    if (it != gc.end()) overlap += std::min(c, it->second);
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * p * r / (p + r);
}

std::vector<double> gate_stats(std::span<const GateTrace> traces) {
  if (traces.empty()) throw ContractError("gate_stats: no traces");
  const int n_layers = traces[0].n_layers;
  const int max_loops = traces[0].max_loops;
  std::vector<double> sums(static_cast<std::size_t>(n_layers), 0.0);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_layers), 0);
  for (const auto& tr : traces) {
    if (tr.n_layers != n_layers || tr.max_loops != max_loops)
      throw ContractError("gate_stats: traces come from different configurations");
    for (int l = 0; l < n_layers; ++l)
      for (int s = 0; s < tr.n_slots; ++s) {
        sums[static_cast<std::size_t>(l)] += tr.loop(l, s);
        counts[static_cast<std::size_t>(l)] += 1;
      }
  }
  std::vector<double> means(static_cast<std::size_t>(n_layers), 0.0);
  for (int l = 0; l < n_layers; ++l)
    means[static_cast<std::size_t>(l)] =
        counts[static_cast<std::size_t>(l)] > 0
            ? sums[static_cast<std::size_t>(l)] / static_cast<double>(counts[static_cast<std::size_t>(l)])
            : 1.0;
  return means;
}

std::string FourWayReport::summary() const {
  std::ostringstream os;
  auto line = [&](const char* name, const Bucket& b) {
    os << name << " (n=" << b.n << ") acc=" << b.accuracy() << "\n";
  };
  line("TT", tt);
  line("TF", tf);
  line("FT", ft);
  line("FF", ff);
  return os.str();
}

FourWayReport four_way_buckets(std::span<const JudgedExample> naive,
                               std::span<const JudgedExample> rag,
                               std::span<const JudgedExample> system) {
  if (naive.size() != rag.size() || rag.size() != system.size())
    throw ContractError("four_way_buckets: result sets differ in size");
  FourWayReport rep;
  for (std::size_t i = 0; i < naive.size(); ++i) {
    if (naive[i].id != rag[i].id || rag[i].id != system[i].id)
      throw ContractError("four_way_buckets: example ids are not aligned at index " + std::to_string(i));
    Bucket& b = naive[i].correct ? (rag[i].correct ? rep.tt : rep.tf)
                                 : (rag[i].correct ? rep.ft : rep.ff);
    b.n += 1;
    b.system_correct += system[i].correct ? 1 : 0;
  }
  return rep;
}

}  // namespace arcslot
