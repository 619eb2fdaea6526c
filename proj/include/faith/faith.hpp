#pragma once

#include "faith/config.hpp"
#include "faith/dataset.hpp"
#include "faith/embedding.hpp"
#include "faith/error.hpp"
#include "faith/evaluation.hpp"
#include "faith/gateway.hpp"
#include "faith/http.hpp"
#include "faith/kmeans.hpp"
#include "faith/knowledge_state.hpp"
#include "faith/orchestrator.hpp"
#include "faith/prompts.hpp"
#include "faith/retrieval.hpp"
#include "faith/uncertainty.hpp"
#include "faith/vector_index.hpp"
