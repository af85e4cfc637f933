#include "msmc/msmcr.hpp"

#include <string>

namespace msmc {

void Msmcr::validate(const Codebooks* codebooks) const {
  const std::size_t s = stages.size();
  if (s == 0) throw ContractViolation("MSMCR has no stages");
  if (rates.size() != s || codebook_sizes.size() != s) throw ContractViolation("MSMCR stage metadata size mismatch");
  if (heads < 1) throw ContractViolation("MSMCR head count must be >= 1");
  for (int d : rates)
    if (d < 1) throw ContractViolation("MSMCR down-sampling rates must be >= 1");
  for (std::size_t j = 0; j < s; ++j) {
    const auto& st = stages[j];
    if (st.indices.rows() < 1) throw ContractViolation("MSMCR stage " + std::to_string(j + 1) + " is empty");
    if (st.indices.cols() != heads) throw ContractViolation("MSMCR index matrix head count mismatch");
    if (st.vectors.rows() != st.indices.rows()) throw ContractViolation("MSMCR vectors/indices length mismatch");
    if (st.vectors.cols() % heads != 0) throw ContractViolation("MSMCR vector width not divisible by heads");
    if ((st.indices.array() < 0).any() || (st.indices.array() >= codebook_sizes[j]).any())
      throw ContractViolation("MSMCR index out of codebook range");
    if (j + 1 < s && st.indices.rows() != stages[j + 1].indices.rows() * rates[j + 1])
      throw ContractViolation("MSMCR length chain violated between stages " + std::to_string(j + 1) + " and " +
                              std::to_string(j + 2));
  }
  if (codebooks) {
    if (codebooks->size() != s) throw ContractViolation("MSMCR/codebook stage count mismatch");
    for (std::size_t j = 0; j < s; ++j) {
      const Eigen::MatrixXd expect = dequantize_mh(stages[j].indices, (*codebooks)[j]);
      if (expect.rows() != stages[j].vectors.rows() || expect.cols() != stages[j].vectors.cols() ||
          expect != stages[j].vectors)
        throw ContractViolation("MSMCR vectors are not the codebook entries named by their indices");
    }
  }
}

void rematerialize(Msmcr& m, const Codebooks& codebooks) {
  if (codebooks.size() != m.stages.size()) throw ContractViolation("MSMCR/codebook stage count mismatch");
  for (std::size_t j = 0; j < m.stages.size(); ++j)
    m.stages[j].vectors = dequantize_mh(m.stages[j].indices, codebooks[j]);
}

}  // namespace msmc
