//! Transactional dataset: one-of-a-kind items, users and timestamped purchases.
//!
//! A [`Catalog`] is an immutable, validated snapshot. Items are stored sorted by
//! id, so an [`ItemIdx`] orders exactly like the [`ItemId`] it points to.
//! Availability and profiles are both defined with a strict "before `t`" rule:
//! an item bought at `t` is still in the pool at `t`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub type Timestamp = i64;

pub const METADATA_HEADER: [&str; 7] = [
    "item_id",
    "color",
    "subject",
    "style",
    "medium",
    "mood",
    "image_path",
];
pub const TRANSACTIONS_HEADER: [&str; 3] = ["user_id", "timestamp", "item_ids"];

fn check_token(kind: &str, raw: &str, forbid_comma: bool) -> std::result::Result<(), String> {
    if raw.is_empty() {
        return Err(format!("empty {kind}"));
    }
    if raw.chars().any(char::is_whitespace) || (forbid_comma && raw.contains(',')) {
        return Err(format!("invalid {kind} {raw:?}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(String);

impl ItemId {
    pub fn new(raw: impl Into<String>) -> std::result::Result<Self, String> {
        let raw = raw.into();
        check_token("item id", &raw, true)?;
        Ok(ItemId(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(String);

impl UserId {
    pub fn new(raw: impl Into<String>) -> std::result::Result<Self, String> {
        let raw = raw.into();
        check_token("user id", &raw, true)?;
        Ok(UserId(raw))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dense position of an item inside a [`Catalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemIdx(pub u32);

impl ItemIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// The five curated attributes, in encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Color,
    Subject,
    Style,
    Medium,
    Mood,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Color,
        Attribute::Subject,
        Attribute::Style,
        Attribute::Medium,
        Attribute::Mood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Subject => "subject",
            Attribute::Style => "style",
            Attribute::Medium => "medium",
            Attribute::Mood => "mood",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub id: ItemId,
    pub color: BTreeSet<String>,
    pub subject: BTreeSet<String>,
    pub style: BTreeSet<String>,
    pub medium: BTreeSet<String>,
    pub mood: BTreeSet<String>,
    pub image_path: Option<PathBuf>,
}

impl ItemRecord {
    pub fn new(id: ItemId) -> Self {
        ItemRecord {
            id,
            color: BTreeSet::new(),
            subject: BTreeSet::new(),
            style: BTreeSet::new(),
            medium: BTreeSet::new(),
            mood: BTreeSet::new(),
            image_path: None,
        }
    }

    pub fn attribute(&self, attr: Attribute) -> &BTreeSet<String> {
        match attr {
            Attribute::Color => &self.color,
            Attribute::Subject => &self.subject,
            Attribute::Style => &self.style,
            Attribute::Medium => &self.medium,
            Attribute::Mood => &self.mood,
        }
    }

    pub fn attribute_mut(&mut self, attr: Attribute) -> &mut BTreeSet<String> {
        match attr {
            Attribute::Color => &mut self.color,
            Attribute::Subject => &mut self.subject,
            Attribute::Style => &mut self.style,
            Attribute::Medium => &mut self.medium,
            Attribute::Mood => &mut self.mood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub user: UserId,
    pub timestamp: Timestamp,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    index: HashMap<ItemId, ItemIdx>,
    transactions: Vec<Transaction>,
    transaction_items: Vec<Vec<ItemIdx>>,
    sold_at: Vec<Option<Timestamp>>,
    user_transactions: BTreeMap<UserId, Vec<usize>>,
}

impl Catalog {
    /// Validates and indexes items and transactions.
    ///
    /// Transactions are re-sorted by `(timestamp, user id, first item id)`.
    pub fn new(mut items: Vec<ItemRecord>, mut transactions: Vec<Transaction>) -> Result<Self> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in items.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateItem(pair[0].id.to_string()));
            }
        }
        let index: HashMap<ItemId, ItemIdx> = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id.clone(), ItemIdx(i as u32)))
            .collect();

        for tx in &transactions {
            if tx.items.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "transaction of user {} at {} has no items",
                    tx.user, tx.timestamp
                )));
            }
        }
        transactions.sort_by(|a, b| {
            (a.timestamp, &a.user, &a.items[0]).cmp(&(b.timestamp, &b.user, &b.items[0]))
        });

        let mut sold_at = vec![None; items.len()];
        let mut transaction_items = Vec::with_capacity(transactions.len());
        let mut user_transactions: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
        for (pos, tx) in transactions.iter().enumerate() {
            let mut idxs = Vec::with_capacity(tx.items.len());
            for id in &tx.items {
                let idx = *index
                    .get(id)
                    .ok_or_else(|| Error::UnknownItem(id.to_string()))?;
                let slot = &mut sold_at[idx.get()];
                if slot.is_some() {
                    return Err(Error::ItemSoldTwice(id.to_string()));
                }
                *slot = Some(tx.timestamp);
                idxs.push(idx);
            }
            transaction_items.push(idxs);
            user_transactions
                .entry(tx.user.clone())
                .or_default()
                .push(pos);
        }

        Ok(Catalog {
            items,
            index,
            transactions,
            transaction_items,
            sold_at,
            user_transactions,
        })
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn item(&self, idx: ItemIdx) -> &ItemRecord {
        &self.items[idx.get()]
    }

    pub fn item_id(&self, idx: ItemIdx) -> &ItemId {
        &self.items[idx.get()].id
    }

    pub fn index_of(&self, id: &ItemId) -> Option<ItemIdx> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transactions in chronological replay order.
    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    /// Items of the transaction at `pos` (replay order), as catalog indices.
    pub fn transaction_items(&self, pos: usize) -> &[ItemIdx] {
        &self.transaction_items[pos]
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.user_transactions.keys()
    }

    pub fn has_user(&self, user: &UserId) -> bool {
        self.user_transactions.contains_key(user)
    }

    pub fn sold_at(&self, idx: ItemIdx) -> Option<Timestamp> {
        self.sold_at[idx.get()]
    }

    pub fn is_available(&self, idx: ItemIdx, t: Timestamp) -> bool {
        match self.sold_at[idx.get()] {
            Some(sold) => sold >= t,
            None => true,
        }
    }

    /// Indices of all items not sold strictly before `t`, ascending.
    pub fn available_at(&self, t: Timestamp) -> Vec<ItemIdx> {
        (0..self.items.len() as u32)
            .map(ItemIdx)
            .filter(|&idx| self.is_available(idx, t))
            .collect()
    }

    pub fn available_items(&self, t: Timestamp) -> BTreeSet<ItemId> {
        self.available_at(t)
            .into_iter()
            .map(|idx| self.item_id(idx).clone())
            .collect()
    }

    /// Items the user bought strictly before `t`, in chronological order.
    pub fn profile_indices(&self, user: &UserId, t: Timestamp) -> Result<Vec<ItemIdx>> {
        let positions = self
            .user_transactions
            .get(user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
        Ok(positions
            .iter()
            .filter(|&&pos| self.transactions[pos].timestamp < t)
            .flat_map(|&pos| self.transaction_items[pos].iter().copied())
            .collect())
    }

    pub fn profile_before(&self, user: &UserId, t: Timestamp) -> Result<Vec<ItemId>> {
        Ok(self
            .profile_indices(user, t)?
            .into_iter()
            .map(|idx| self.item_id(idx).clone())
            .collect())
    }

    pub fn write_metadata<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(METADATA_HEADER)?;
        for item in &self.items {
            let join = |set: &BTreeSet<String>| set.iter().cloned().collect::<Vec<_>>().join("|");
            let image = item
                .image_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default();
            w.write_record([
                item.id.as_str(),
                &join(&item.color),
                &join(&item.subject),
                &join(&item.style),
                &join(&item.medium),
                &join(&item.mood),
                &image,
            ])?;
        }
        w.flush()
    }

    pub fn write_transactions<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(TRANSACTIONS_HEADER)?;
        for tx in &self.transactions {
            let items = tx
                .items
                .iter()
                .map(ItemId::as_str)
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([tx.user.as_str(), &tx.timestamp.to_string(), &items])?;
        }
        w.flush()
    }
}

fn parse_error(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_error(file: &str, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    parse_error(file, line, err.to_string())
}

fn open_csv<R: Read>(reader: R, file: &str, header: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let found = rdr.headers().map_err(|e| csv_error(file, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_error(
            file,
            1,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    Ok(rdr)
}

fn split_tokens(cell: &str) -> BTreeSet<String> {
    cell.split('|')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn parse_metadata<R: Read>(reader: R, file: &str) -> Result<Vec<ItemRecord>> {
    let mut rdr = open_csv(reader, file, &METADATA_HEADER)?;
    let mut items = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(file, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = ItemId::new(record[0].trim()).map_err(|m| parse_error(file, line, m))?;
        let mut item = ItemRecord::new(id);
        for (i, attr) in Attribute::ALL.iter().enumerate() {
            *item.attribute_mut(*attr) = split_tokens(&record[i + 1]);
        }
        let image = record[6].trim();
        if !image.is_empty() {
            item.image_path = Some(PathBuf::from(image));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn parse_transactions<R: Read>(reader: R, file: &str) -> Result<Vec<Transaction>> {
    let mut rdr = open_csv(reader, file, &TRANSACTIONS_HEADER)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(file, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let user = UserId::new(record[0].trim()).map_err(|m| parse_error(file, line, m))?;
        let timestamp: Timestamp = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_error(file, line, format!("bad timestamp {:?}", &record[1])))?;
        let mut items = Vec::new();
        for raw in record[2].split(';') {
            let id = ItemId::new(raw.trim()).map_err(|m| parse_error(file, line, m))?;
            if items.contains(&id) {
                return Err(Error::ItemSoldTwice(id.to_string()));
            }
            items.push(id);
        }
        out.push(Transaction {
            user,
            timestamp,
            items,
        });
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_catalog(metadata_file: &Path, transactions_file: &Path) -> Result<Catalog> {
    let items = parse_metadata(open(metadata_file)?, &metadata_file.display().to_string())?;
    let transactions = parse_transactions(
        open(transactions_file)?,
        &transactions_file.display().to_string(),
    )?;
    Catalog::new(items, transactions)
}
