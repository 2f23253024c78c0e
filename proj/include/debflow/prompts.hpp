#pragma once

#include <map>
#include <string>
#include <vector>

namespace debflow {

namespace role {
inline constexpr const char* kDebater = "debater";
inline constexpr const char* kProponentSynthesis = "proponent_synthesis";
inline constexpr const char* kOpponentSynthesis = "opponent_synthesis";
inline constexpr const char* kJudge = "judge";
inline constexpr const char* kFinalJudge = "final_judge";
inline constexpr const char* kGeneExtract = "gene_extract";
inline constexpr const char* kGeneRefine = "gene_refine";
}  // namespace role

/// The five debate roles followed by the two feedback roles.
const std::vector<std::string>& prompt_roles();
const std::vector<std::string>& debate_roles();

std::string default_prompt(const std::string& role);

/// Role name -> template text. Templates use `{name}` placeholders.
using PromptSet = std::map<std::string, std::string>;

PromptSet default_prompts();

/// Reads `<dir>/<role>.txt` for every role; roles without a file keep the default.
PromptSet load_prompt_dir(const std::string& dir);
void write_prompt_dir(const PromptSet& prompts, const std::string& dir);

/// Description of the edit JSON contract, injected as {edit_schema}.
const std::string& edit_schema_text();

}  // namespace debflow
