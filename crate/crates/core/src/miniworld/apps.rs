//! The MiniWorld apps: endpoint documentation, access rules and handlers.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde_json::{json, Value};

use crate::env::{ApiDoc, ApiParam, ErrorKind};

use super::state::{Email, Playlist, TokenProblem, Transfer, WorldState};

pub const PAGE_SIZE: usize = 5;

/// Apps in catalog order.
pub const APPS: [(&str, &str); 5] = [
    ("supervisor", "The user's own profile, account passwords, and task completion."),
    ("mail", "Email: read the inbox and send messages."),
    ("bank", "Banking: balance, transaction history and transfers."),
    ("music", "Music streaming: song catalog and playlists."),
    ("api_docs", "Documentation for every app and endpoint. No login needed."),
];

/// An error raised by a call, before it is rendered into an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    fn new(kind: ErrorKind, message: String) -> Self {
        ApiError { kind, message }
    }
}

/// Stable message templates, one per error kind.
pub mod templates {
    use super::*;

    pub fn auth_required(app: &str, endpoint: &str, problem: TokenProblem) -> ApiError {
        ApiError::new(
            ErrorKind::AuthRequired,
            format!(
                "AuthRequired: apis.{app}.{endpoint} needs a valid access_token for the {app} app ({}). \
Log in with apis.{app}.login(username=..., password=...) and pass access_token=<token>.",
                problem.describe()
            ),
        )
    }

    pub fn invalid_credentials(app: &str) -> ApiError {
        ApiError::new(
            ErrorKind::InvalidCredentials,
            format!("InvalidCredentials: apis.{app}.login rejected the username/password pair."),
        )
    }

    pub fn unknown_endpoint(app: &str, endpoint: &str) -> ApiError {
        ApiError::new(
            ErrorKind::UnknownEndpoint,
            format!(
                "UnknownEndpoint: apis.{app}.{endpoint} does not exist. \
List endpoints with apis.api_docs.show_api_descriptions(app_name=\"{app}\")."
            ),
        )
    }

    pub fn schema_mismatch(app: &str, endpoint: &str, detail: &str) -> ApiError {
        ApiError::new(
            ErrorKind::SchemaMismatch,
            format!(
                "SchemaMismatch: apis.{app}.{endpoint} {detail}. \
See apis.api_docs.show_api_doc(app_name=\"{app}\", api_name=\"{endpoint}\")."
            ),
        )
    }

    pub fn pagination_bound(app: &str, endpoint: &str, page_index: i64, total_pages: usize) -> ApiError {
        ApiError::new(
            ErrorKind::PaginationBound,
            format!(
                "PaginationBound: page_index {page_index} is out of range for apis.{app}.{endpoint} \
(valid page_index values are 0 to {}).",
                total_pages - 1
            ),
        )
    }

    pub fn runtime(detail: &str) -> ApiError {
        ApiError::new(ErrorKind::Runtime, format!("RuntimeError: {detail}"))
    }
}

type Handler = fn(&mut WorldState, &BTreeMap<String, Value>) -> Result<Value, ApiError>;

pub struct EndpointSpec {
    pub doc: ApiDoc,
    /// Requires an `access_token` issued by this app.
    pub protected: bool,
    handler: Handler,
}

impl EndpointSpec {
    pub fn app(&self) -> &str {
        &self.doc.app
    }

    pub fn name(&self) -> &str {
        &self.doc.endpoint
    }
}

fn p(name: &str, ty: &str, required: bool) -> ApiParam {
    ApiParam { name: name.into(), ty: ty.into(), required }
}

fn spec(app: &str, endpoint: &str, params: Vec<ApiParam>, description: &str, protected: bool, handler: Handler) -> EndpointSpec {
    EndpointSpec {
        doc: ApiDoc::new(app, endpoint, params, description).expect("endpoint table has unique params"),
        protected,
        handler,
    }
}

pub fn endpoints() -> &'static [EndpointSpec] {
    static TABLE: OnceLock<Vec<EndpointSpec>> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

pub fn find(app: &str, endpoint: &str) -> Option<&'static EndpointSpec> {
    endpoints().iter().find(|e| e.app() == app && e.name() == endpoint)
}

pub fn doc(app: &str, endpoint: &str) -> Option<ApiDoc> {
    find(app, endpoint).map(|e| e.doc.clone())
}

pub fn is_app(app: &str) -> bool {
    APPS.iter().any(|(a, _)| *a == app)
}

fn build_table() -> Vec<EndpointSpec> {
    let tok = || p("access_token", "string", true);
    let page = || p("page_index", "integer", false);
    vec![
        spec("supervisor", "show_profile", vec![], "Show the user's name, email and phone.", false, sup_profile),
        spec(
            "supervisor",
            "show_account_passwords",
            vec![],
            "List the user's account passwords, one per app.",
            false,
            sup_passwords,
        ),
        spec(
            "supervisor",
            "complete_task",
            vec![p("answer", "any", false)],
            "Mark the task as finished, optionally with an answer. Ends the episode.",
            false,
            sup_complete,
        ),
        spec(
            "api_docs",
            "show_app_descriptions",
            vec![],
            "List every app with a one-line description.",
            false,
            docs_apps,
        ),
        spec(
            "api_docs",
            "show_api_descriptions",
            vec![p("app_name", "string", true)],
            "List the endpoints of one app.",
            false,
            docs_apis,
        ),
        spec(
            "api_docs",
            "show_api_doc",
            vec![p("app_name", "string", true), p("api_name", "string", true)],
            "Show the full parameter documentation of one endpoint.",
            false,
            docs_api,
        ),
        spec(
            "mail",
            "login",
            vec![p("username", "string", true), p("password", "string", true)],
            "Log in with the user's email address and mail password. Returns an access_token.",
            false,
            |w, a| login(w, a, "mail"),
        ),
        spec(
            "mail",
            "list_inbox",
            vec![tok(), page()],
            "List received emails, five per page.",
            true,
            mail_inbox,
        ),
        spec(
            "mail",
            "show_email",
            vec![tok(), p("email_id", "integer", true)],
            "Show one received email in full.",
            true,
            mail_show,
        ),
        spec(
            "mail",
            "send",
            vec![tok(), p("to", "string", true), p("subject", "string", false), p("body", "string", true)],
            "Send an email.",
            true,
            mail_send,
        ),
        spec("mail", "list_sent", vec![tok(), page()], "List sent emails, five per page.", true, mail_sent),
        spec(
            "bank",
            "login",
            vec![p("username", "string", true), p("password", "string", true)],
            "Log in with the user's email address and bank password. Returns an access_token.",
            false,
            |w, a| login(w, a, "bank"),
        ),
        spec("bank", "show_balance", vec![tok()], "Show the account balance.", true, bank_balance),
        spec(
            "bank",
            "list_transactions",
            vec![tok(), page()],
            "List past transactions, five per page.",
            true,
            bank_transactions,
        ),
        spec(
            "bank",
            "transfer",
            vec![tok(), p("to_account", "string", true), p("amount", "number", true), p("note", "string", false)],
            "Transfer money to another account.",
            true,
            bank_transfer,
        ),
        spec(
            "music",
            "login",
            vec![p("username", "string", true), p("password", "string", true)],
            "Log in with the user's email address and music password. Returns an access_token.",
            false,
            |w, a| login(w, a, "music"),
        ),
        spec(
            "music",
            "search_songs",
            vec![p("query", "string", false), page()],
            "Search the public song catalog by title, artist or genre, five per page. No login needed.",
            false,
            music_search,
        ),
        spec("music", "list_playlists", vec![tok(), page()], "List the user's playlists.", true, music_playlists),
        spec(
            "music",
            "create_playlist",
            vec![tok(), p("title", "string", true)],
            "Create an empty playlist. Returns its playlist_id.",
            true,
            music_create,
        ),
        spec(
            "music",
            "add_song_to_playlist",
            vec![tok(), p("playlist_id", "integer", true), p("song_id", "integer", true)],
            "Add a song to one of the user's playlists.",
            true,
            music_add,
        ),
        spec(
            "music",
            "show_playlist",
            vec![tok(), p("playlist_id", "integer", true)],
            "Show one playlist with its songs.",
            true,
            music_show_playlist,
        ),
    ]
}

fn type_ok(ty: &str, v: &Value) -> bool {
    match ty {
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "list" => v.is_array(),
        _ => true,
    }
}

/// Runs one call. `args` are already bound to parameter names.
///
/// Checks run in a fixed order: undocumented argument names, then the
/// access token, then missing or mistyped arguments.
pub fn call(world: &mut WorldState, spec: &EndpointSpec, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let (app, name) = (spec.app(), spec.name());
    if let Some(extra) = args.keys().find(|k| !spec.doc.has_param(k)) {
        return Err(templates::schema_mismatch(app, name, &format!("got an unexpected argument '{extra}'")));
    }
    if spec.protected {
        world
            .check_token(app, args.get("access_token"))
            .map_err(|problem| templates::auth_required(app, name, problem))?;
    }
    for param in &spec.doc.parameters {
        match args.get(&param.name) {
            None | Some(Value::Null) if param.required => {
                return Err(templates::schema_mismatch(
                    app,
                    name,
                    &format!("is missing required argument '{}'", param.name),
                ))
            }
            Some(v) if !v.is_null() && !type_ok(&param.ty, v) => {
                return Err(templates::schema_mismatch(
                    app,
                    name,
                    &format!("argument '{}' must be of type {}", param.name, param.ty),
                ))
            }
            _ => {}
        }
    }
    (spec.handler)(world, args)
}

fn s<'a>(args: &'a BTreeMap<String, Value>, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or("")
}

fn int(args: &BTreeMap<String, Value>, key: &str) -> Option<i64> {
    args.get(key).and_then(Value::as_i64)
}

fn paginate(app: &str, endpoint: &str, items: Vec<Value>, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let page_index = int(args, "page_index").unwrap_or(0);
    let total_pages = items.len().div_ceil(PAGE_SIZE).max(1);
    if page_index < 0 || page_index as usize >= total_pages {
        return Err(templates::pagination_bound(app, endpoint, page_index, total_pages));
    }
    let start = page_index as usize * PAGE_SIZE;
    let page: Vec<Value> = items.into_iter().skip(start).take(PAGE_SIZE).collect();
    let next = if (page_index as usize) + 1 < total_pages { json!(page_index + 1) } else { Value::Null };
    Ok(json!({ "items": page, "page_index": page_index, "next_page_index": next, "total_pages": total_pages }))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("world records serialize")
}

fn sup_profile(w: &mut WorldState, _: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    Ok(to_value(&w.profile))
}

fn sup_passwords(w: &mut WorldState, _: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    Ok(Value::Array(
        w.passwords.iter().map(|(app, pw)| json!({ "account_name": app, "password": pw })).collect(),
    ))
}

fn sup_complete(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    w.completed = Some(args.get("answer").cloned().unwrap_or(Value::Null));
    Ok(json!({ "message": "Task marked as complete." }))
}

fn docs_apps(_: &mut WorldState, _: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    Ok(Value::Array(APPS.iter().map(|(n, d)| json!({ "name": n, "description": d })).collect()))
}

fn docs_apis(_: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let app = s(args, "app_name");
    if !is_app(app) {
        return Err(templates::runtime(&format!("no app named '{app}'")));
    }
    Ok(Value::Array(
        endpoints()
            .iter()
            .filter(|e| e.app() == app)
            .map(|e| json!({ "name": e.name(), "description": e.doc.description }))
            .collect(),
    ))
}

fn docs_api(_: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let (app, api) = (s(args, "app_name"), s(args, "api_name"));
    match find(app, api) {
        Some(e) => Ok(to_value(&e.doc)),
        None => Err(templates::unknown_endpoint(app, api)),
    }
}

fn login(w: &mut WorldState, args: &BTreeMap<String, Value>, app: &str) -> Result<Value, ApiError> {
    let user = s(args, "username");
    let ok = user.eq_ignore_ascii_case(&w.profile.email)
        && w.passwords.get(app).is_some_and(|pw| pw == s(args, "password"));
    if !ok {
        return Err(templates::invalid_credentials(app));
    }
    let user = w.profile.email.clone();
    let token = w.mint_token(app, &user);
    Ok(json!({ "access_token": token, "token_type": "Bearer" }))
}

fn email_summary(e: &Email) -> Value {
    json!({ "email_id": e.email_id, "from": e.from, "to": e.to, "subject": e.subject })
}

fn mail_inbox(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let items = w.mail.inbox.iter().map(email_summary).collect();
    paginate("mail", "list_inbox", items, args)
}

fn mail_sent(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let items = w.mail.sent.iter().map(email_summary).collect();
    paginate("mail", "list_sent", items, args)
}

fn mail_show(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let id = int(args, "email_id").unwrap_or(-1);
    w.mail
        .inbox
        .iter()
        .find(|e| e.email_id as i64 == id)
        .map(to_value)
        .ok_or_else(|| templates::runtime(&format!("no email with email_id {id}")))
}

fn mail_send(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let email = Email {
        email_id: w.mail.sent.len() as u64 + 1,
        from: w.profile.email.clone(),
        to: s(args, "to").to_string(),
        subject: s(args, "subject").to_string(),
        body: s(args, "body").to_string(),
    };
    let id = email.email_id;
    w.mail.sent.push(email);
    Ok(json!({ "message": "Email sent.", "email_id": id }))
}

fn bank_balance(w: &mut WorldState, _: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    Ok(json!({ "balance": w.bank.balance }))
}

fn bank_transactions(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let items = w.bank.transactions.iter().map(to_value).collect();
    paginate("bank", "list_transactions", items, args)
}

fn bank_transfer(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let amount = args.get("amount").and_then(Value::as_f64).unwrap_or(0.0);
    if amount <= 0.0 {
        return Err(templates::runtime("transfer amount must be positive"));
    }
    if amount > w.bank.balance + 1e-9 {
        return Err(templates::runtime("insufficient funds"));
    }
    w.bank.balance -= amount;
    let t = Transfer {
        transfer_id: w.bank.transfers.len() as u64 + 1,
        to_account: s(args, "to_account").to_string(),
        amount,
        note: s(args, "note").to_string(),
    };
    let id = t.transfer_id;
    w.bank.transfers.push(t);
    Ok(json!({ "message": "Transfer completed.", "transfer_id": id, "balance": w.bank.balance }))
}

fn music_search(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let q = s(args, "query").to_lowercase();
    let items = w
        .music
        .songs
        .iter()
        .filter(|song| {
            q.is_empty()
                || song.title.to_lowercase().contains(&q)
                || song.artist.to_lowercase().contains(&q)
                || song.genre.to_lowercase().contains(&q)
        })
        .map(to_value)
        .collect();
    paginate("music", "search_songs", items, args)
}

fn playlist_summary(p: &Playlist) -> Value {
    json!({ "playlist_id": p.playlist_id, "title": p.title, "song_count": p.song_ids.len() })
}

fn music_playlists(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let items = w.music.playlists.iter().map(playlist_summary).collect();
    paginate("music", "list_playlists", items, args)
}

fn music_create(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let id = w.music.playlists.len() as u64 + 1;
    w.music.playlists.push(Playlist { playlist_id: id, title: s(args, "title").to_string(), song_ids: vec![] });
    Ok(json!({ "message": "Playlist created.", "playlist_id": id }))
}

fn music_add(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let pid = int(args, "playlist_id").unwrap_or(-1);
    let sid = int(args, "song_id").unwrap_or(-1);
    if !w.music.songs.iter().any(|s| s.song_id as i64 == sid) {
        return Err(templates::runtime(&format!("no song with song_id {sid}")));
    }
    let playlist = w
        .music
        .playlists
        .iter_mut()
        .find(|p| p.playlist_id as i64 == pid)
        .ok_or_else(|| templates::runtime(&format!("no playlist with playlist_id {pid}")))?;
    if !playlist.song_ids.contains(&(sid as u64)) {
        playlist.song_ids.push(sid as u64);
    }
    Ok(json!({ "message": "Song added.", "playlist_id": pid, "song_count": playlist.song_ids.len() }))
}

fn music_show_playlist(w: &mut WorldState, args: &BTreeMap<String, Value>) -> Result<Value, ApiError> {
    let pid = int(args, "playlist_id").unwrap_or(-1);
    w.music
        .playlists
        .iter()
        .find(|p| p.playlist_id as i64 == pid)
        .map(to_value)
        .ok_or_else(|| templates::runtime(&format!("no playlist with playlist_id {pid}")))
}
