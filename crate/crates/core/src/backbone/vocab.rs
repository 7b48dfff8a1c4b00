use crate::error::{contract, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 256;
pub const EOS: TokenId = 257;
pub const CLS: TokenId = 258;
const FIRST_MID: TokenId = 259;

/// Byte-level vocabulary: 256 byte tokens, `PAD`, `EOS`, `CLS`, then one
/// model-identifier token `MID_t` per candidate model (`t` is 1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    models: usize,
}

/// Where special tokens go around the encoded bytes.
#[derive(Clone, Debug, Default)]
pub struct Placement<'a> {
    pub prefix: &'a [&'a str],
    pub suffix: &'a [&'a str],
    /// Upper bound on the encoded length; the text is truncated from the end
    /// to fit.
    pub max_len: Option<usize>,
}

impl Vocabulary {
    pub fn new(models: usize) -> Self {
        Self { models }
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn size(&self) -> usize {
        FIRST_MID + self.models
    }

    /// Id of `MID_t` for 1-based `t`.
    pub fn mid(&self, t: usize) -> Result<TokenId> {
        if t == 0 || t > self.models {
            return Err(contract(format!("MID_{t} outside 1..={}", self.models)));
        }
        Ok(FIRST_MID + t - 1)
    }

    /// 1-based model index if `id` is a MID token.
    pub fn mid_index(&self, id: TokenId) -> Option<usize> {
        (FIRST_MID..self.size()).contains(&id).then(|| id - FIRST_MID + 1)
    }

    pub fn special(&self, name: &str) -> Result<TokenId> {
        match name {
            "PAD" => Ok(PAD),
            "EOS" => Ok(EOS),
            "CLS" => Ok(CLS),
            _ => {
                let t = name
                    .strip_prefix("MID_")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| contract(format!("unknown special token {name:?}")))?;
                self.mid(t)
            }
        }
    }

    pub fn name(&self, id: TokenId) -> String {
        match id {
            0..=255 => format!("{:?}", id as u8 as char),
            PAD => "PAD".into(),
            EOS => "EOS".into(),
            CLS => "CLS".into(),
            _ => match self.mid_index(id) {
                Some(t) => format!("MID_{t}"),
                None => format!("<{id}>"),
            },
        }
    }

    pub fn encode_bytes(&self, text: &[u8]) -> Vec<TokenId> {
        text.iter().map(|&b| b as TokenId).collect()
    }

    pub fn encode(&self, text: &[u8], placement: &Placement<'_>) -> Result<Vec<TokenId>> {
        let prefix = placement
            .prefix
            .iter()
            .map(|n| self.special(n))
            .collect::<Result<Vec<_>>>()?;
        let suffix = placement
            .suffix
            .iter()
            .map(|n| self.special(n))
            .collect::<Result<Vec<_>>>()?;
        let budget = match placement.max_len {
            Some(max) => max
                .checked_sub(prefix.len() + suffix.len())
                .ok_or_else(|| contract(format!("{max} tokens cannot hold the requested specials")))?,
            None => usize::MAX,
        };
        let mut out = prefix;
        out.extend(text.iter().take(budget).map(|&b| b as TokenId));
        out.extend(suffix);
        Ok(out)
    }

    /// Bytes of the byte tokens in `ids`; special tokens are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect()
    }
}
