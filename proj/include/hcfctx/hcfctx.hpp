#pragma once

#include "hcfctx/context_log.hpp"
#include "hcfctx/crypto/paillier.hpp"
#include "hcfctx/crypto/secure_logsum.hpp"
#include "hcfctx/errors.hpp"
#include "hcfctx/hmm.hpp"
#include "hcfctx/model.hpp"
#include "hcfctx/mpc/audit.hpp"
#include "hcfctx/mpc/protocol.hpp"
#include "hcfctx/mpc/secure_hmm.hpp"
#include "hcfctx/prediction.hpp"
#include "hcfctx/schema.hpp"
#include "hcfctx/selection.hpp"
#include "hcfctx/synthetic.hpp"
